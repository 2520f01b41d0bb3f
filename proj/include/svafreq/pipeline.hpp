#pragma once

#include "svafreq/corpus.hpp"
#include "svafreq/error.hpp"
#include "svafreq/neural.hpp"
#include "svafreq/probe.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace svafreq::pipeline {

namespace fs = std::filesystem;

/// A stage failed; partial artifacts are left in place.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// The intervened corpus does not match the requested counts.
class VerificationFailure : public Error {
public:
    using Error::Error;
};

struct InterventionConfig {
    std::vector<std::string> vois;
    std::string mode = "absolute";  // absolute | relative
    std::uint64_t n = 0;
    std::vector<std::string> groupS;
    std::vector<std::string> groupP;
    std::uint64_t nVary = 1;
    std::uint64_t nConstant = 1;
    std::uint64_t eligibilityMin = 0;
};

struct ExperimentConfig {
    fs::path baseDir;  // relative paths resolve against this
    fs::path outputDir;
    std::uint64_t masterSeed = 1;

    std::vector<fs::path> corpusPaths;
    corpus::TokenizerConfig tokenizer;

    fs::path nouns;
    fs::path verbs;
    fs::path contexts;
    std::optional<fs::path> manualAnnotations;
    bool filterContexts = true;

    std::optional<InterventionConfig> intervention;

    std::string scorer = "neural";  // neural | unigram | pair
    neural::NeuralScorerConfig neural;
    std::uint64_t vocabMinCount = 1;

    std::string evalVerbs = "vois";  // vois | all
    std::uint64_t evalSample = 0;    // 0 = every stimulus
    std::size_t auditSize = 160;

    bool probeEnabled = true;
    probe::ProbeConfig probe;
    std::size_t probeTrainSubjects = 0;  // 0 = three quarters of the nouns
    std::size_t probeTrainContexts = 0;  // 0 = all but max(1, C * 6 / 56) contexts
    std::size_t probeFolds = 4;

    std::vector<double> frequencyEdges{1, 10, 100, 1000, 10000, 100000};
    std::vector<double> ratioEdges{1.0 / 16, 1.0 / 4, 1, 4, 16};
    std::vector<double> attractorEdges{1, 2, 3};
    std::vector<double> confidenceThresholds{0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99};

    /// Parses YAML. `overrides` are "dotted.key=value" pairs applied before parsing.
    /// Throws ValidationError / ParseError.
    static ExperimentConfig from_yaml(const std::string& text, const fs::path& baseDir,
                                      std::span<const std::string> overrides = {});
    static ExperimentConfig load(const fs::path& path, std::span<const std::string> overrides = {});

    /// Canonical YAML with every key spelled out.
    std::string to_yaml() const;

    /// SHA-256 of the canonical YAML without output_dir.
    std::string hash() const;

    fs::path resolve(const fs::path& p) const;

    /// Checks that every referenced input exists and the settings are
    /// consistent. Throws ValidationError.
    void preflight() const;
};

enum class Stage : std::uint8_t { Index, GenStimuli, Intervene, Train, Eval, Probe, Report };

std::string_view to_string(Stage s) noexcept;
Stage parse_stage(std::string_view s);
std::span<const Stage> all_stages() noexcept;

struct OutputFile {
    std::string path;  // relative to the output directory
    std::string sha256;
    std::uint64_t bytes = 0;

    bool operator==(const OutputFile&) const = default;
};

struct StageRecord {
    std::string name;
    std::string inputHash;
    std::vector<OutputFile> outputs;
    bool skipped = false;
    double seconds = 0.0;
};

struct RunManifest {
    std::string softwareVersion;
    std::string configHash;
    std::uint64_t masterSeed = 0;
    std::vector<OutputFile> inputs;  // paths as written in the config
    OutputFile effectiveConfig;      // config.effective.yaml
    std::vector<StageRecord> stages;

    /// Deterministic JSON; timings and skip flags are left out.
    std::string to_json() const;
};

/// Runs the stages in order up to and including `until`. Stages whose stamp
/// matches their inputs and whose outputs are intact are skipped. Writes
/// manifest.json (last) and timings.json into the output directory.
/// Throws StageError, VerificationFailure, or ValidationError from preflight.
RunManifest run(const ExperimentConfig& config, std::optional<Stage> until = std::nullopt, std::ostream* log = nullptr);

enum class SweepAxis : std::uint8_t { AbsoluteN, NVary };

std::string_view to_string(SweepAxis a) noexcept;
SweepAxis parse_sweep_axis(std::string_view s);

struct SweepPoint {
    std::uint64_t value = 0;
    double errorRate = 0.0;
    std::size_t records = 0;
    /// nVary sweeps: error on stimuli whose target form sits at n_constant.
    std::optional<double> constantTargetError;
};

struct SweepResult {
    std::vector<RunManifest> runs;
    std::vector<SweepPoint> curve;
};

/// One run per value under <output>/sweep-<axis>-<value>, then
/// <output>/sweep-<axis>.csv and a plot-data file with the combined curve.
SweepResult sweep(const ExperimentConfig& config, SweepAxis axis, std::span<const std::uint64_t> values,
                  std::ostream* log = nullptr);

/// Exclusive lock on a directory via an O_EXCL lock file. A lock left by a
/// process that no longer exists is taken over.
class DirectoryLock {
public:
    explicit DirectoryLock(const fs::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    fs::path path_;
};

} // namespace svafreq::pipeline
