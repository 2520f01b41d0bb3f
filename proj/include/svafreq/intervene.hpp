#pragma once

#include "svafreq/corpus.hpp"
#include "svafreq/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace svafreq::intervene {

/// Both inflections of every VOI at the same count n.
struct AbsoluteMode {
    std::uint64_t n = 0;

    bool operator==(const AbsoluteMode&) const = default;
};

/// groupS: singular at nVary, plural at nConstant.
/// groupP: plural at nVary, singular at nConstant.
struct RelativeMode {
    std::vector<std::string> groupS;  // lemmas
    std::vector<std::string> groupP;
    std::uint64_t nVary = 1;
    std::uint64_t nConstant = 1;

    bool operator==(const RelativeMode&) const = default;
};

struct InterventionSpec {
    std::vector<Lexeme> vois;
    std::variant<AbsoluteMode, RelativeMode> mode = AbsoluteMode{};
    std::uint64_t seed = 0;

    /// Throws ValidationError when the invariants do not hold.
    void validate() const;

    /// Requested occurrence count for every VOI form, keyed by form.
    std::map<std::string, std::uint64_t> target_counts() const;

    bool operator==(const InterventionSpec&) const = default;
};

/// YAML spec file. VOIs are listed by lemma and resolved against `verbs`:
///
///   seed: 7
///   vois: [combat, review]
///   mode: absolute        # or: relative
///   n: 10                 # absolute
///   group_s: [combat]     # relative
///   group_p: [review]
///   n_vary: 10
///   n_constant: 1000
InterventionSpec load_spec(const std::filesystem::path& path, std::span<const Lexeme> verbs);
void save_spec(const InterventionSpec& spec, const std::filesystem::path& path);

struct RemovedPool {
    /// Sentences holding exactly one occurrence of exactly one VOI form, in corpus order.
    std::map<std::string, std::vector<corpus::Sentence>> perForm;
    /// Sentences with two or more VOI occurrences (same or different forms).
    std::vector<corpus::Sentence> discarded;

    std::size_t pooled() const;
};

struct ExciseResult {
    corpus::Corpus clean;
    RemovedPool pool;
};

/// Removes every sentence that contains a VOI form. Removed sentences keep
/// their original ids; the clean corpus is renumbered densely.
ExciseResult excise(const corpus::Corpus& corpus, std::span<const Lexeme> vois);

/// Re-inserts exactly counts[form] pooled sentences per form (sampled without
/// replacement) at uniformly drawn positions. Throws PoolUnderflowError naming
/// every short form.
corpus::Corpus inject_counts(const corpus::Corpus& clean, const RemovedPool& pool,
                             const std::map<std::string, std::uint64_t>& counts, std::uint64_t seed);

corpus::Corpus inject_absolute(const corpus::Corpus& clean, const RemovedPool& pool, std::span<const Lexeme> vois,
                               std::uint64_t n, std::uint64_t seed);

corpus::Corpus inject_relative(const corpus::Corpus& clean, const RemovedPool& pool, std::span<const Lexeme> vois,
                               const RelativeMode& mode, std::uint64_t seed);

/// Dispatches on spec.mode.
corpus::Corpus apply_spec(const corpus::Corpus& clean, const RemovedPool& pool, const InterventionSpec& spec);

struct FormCheck {
    std::uint64_t requested = 0;
    std::uint64_t observed = 0;

    bool operator==(const FormCheck&) const = default;
};

struct VerificationReport {
    std::map<std::string, FormCheck> perForm;
    bool pass = false;

    std::vector<std::string> failing_forms() const;
};

/// Recounts every VOI form token from scratch.
VerificationReport verify_spec(const corpus::Corpus& corpus, const InterventionSpec& spec);

/// CSV: form,requested,observed
void write_verification_csv(const VerificationReport& report, const std::filesystem::path& path);

/// Throws ValidationError listing every VOI form below `minCount`.
void check_voi_eligibility(const corpus::FrequencyIndex& index, std::span<const Lexeme> vois, std::uint64_t minCount);

} // namespace svafreq::intervene
