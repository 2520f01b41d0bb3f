#pragma once

#include "svafreq/scorer.hpp"
#include "svafreq/stimuli.hpp"
#include "svafreq/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace svafreq::probe {

struct GroupKeys {
    std::optional<std::uint32_t> subjectId;
    std::optional<std::uint32_t> verbId;
    std::uint32_t contextId = 0;

    bool operator==(const GroupKeys&) const = default;
};

struct ProbeItem {
    std::vector<double> vector;
    Number label = Number::Singular;
    GroupKeys keys;

    bool operator==(const ProbeItem&) const = default;
};

class ProbeDataset {
public:
    ProbeDataset() = default;

    /// Throws ValidationError when the vector dimension differs from earlier items.
    void add(ProbeItem item);

    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    std::size_t dim() const noexcept { return items_.empty() ? 0 : items_.front().vector.size(); }
    const std::vector<ProbeItem>& items() const noexcept { return items_; }
    std::size_t count(Number label) const;

    bool operator==(const ProbeDataset&) const = default;

private:
    std::vector<ProbeItem> items_;
};

/// CSV: label,subject_id,verb_id,context_id,x0..x{d-1}. Doubles are written in
/// shortest round-trip form, so save/load is exact.
void save_dataset_csv(const ProbeDataset& data, const std::filesystem::path& path);
ProbeDataset load_dataset_csv(const std::filesystem::path& path);

struct ProbeConfig {
    std::uint32_t hiddenDim = 64;
    std::uint32_t epochs = 40;
    double learningRate = 0.01;
    std::uint32_t batchSize = 32;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const ProbeConfig&) const = default;
};

struct ProbeSplit {
    ProbeDataset train;
    ProbeDataset eval;
};

/// Noun and context indices used for training. Evaluation uses only pairs
/// whose noun and context are both absent from these sets.
struct SubjectSplit {
    std::vector<std::uint32_t> trainSubjects;
    std::vector<std::uint32_t> trainContexts;
};

/// `trainSubjects` consecutive nouns and `trainContexts` consecutive contexts
/// (cyclically), starting at rotation * N / folds and rotation * C / folds.
SubjectSplit rotated_split(std::size_t nouns, std::size_t contexts, std::size_t trainSubjects,
                           std::size_t trainContexts, std::size_t rotation = 0, std::size_t folds = 1);

/// One item per (noun, context, number): the masked state at the verb slot,
/// labelled with the subject's number. Throws ValidationError when the split
/// leaves the evaluation set empty or names an index out of range.
ProbeSplit build_subject_probe_dataset(const scorer::EmbeddingModel& model, std::span<const Lexeme> nouns,
                                       std::span<const stimuli::SententialContext> contexts, const SubjectSplit& split);

/// One item per (verb, number, context): the contextual embedding of the verb
/// form with the subject slot masked. Throws ValidationError when the two
/// verb sets share a lemma.
ProbeSplit build_verb_probe_dataset(const scorer::EmbeddingModel& model, std::span<const Lexeme> trainVerbs,
                                    std::span<const Lexeme> evalVerbs,
                                    std::span<const stimuli::SententialContext> contexts);

/// Same, splitting `verbs` by VOI membership. Every VOI lemma must be present.
ProbeSplit build_verb_probe_dataset(const scorer::EmbeddingModel& model, std::span<const Lexeme> verbs,
                                    std::span<const stimuli::SententialContext> contexts,
                                    const std::set<std::string>& voiLemmas);

/// Standardized input, one tanh hidden layer, two-way softmax output.
class MlpProbe {
public:
    MlpProbe(std::size_t inputDim, std::size_t hiddenDim);

    std::size_t input_dim() const noexcept { return inputDim_; }
    double prob_plural(std::span<const double> x) const;
    Number predict(std::span<const double> x) const;

private:
    friend MlpProbe train_probe(const ProbeDataset& data, const ProbeConfig& config);

    std::size_t inputDim_;
    std::size_t hiddenDim_;
    std::vector<double> mean_;
    std::vector<double> scale_;
    std::vector<double> params_;  // W1 (h x d), b1 (h), W2 (2 x h), b2 (2)
};

/// Adam on mini-batches. Items are put in a canonical order before the seeded
/// shuffle, so the result does not depend on input order.
/// Throws ValidationError on an empty or single-class dataset.
MlpProbe train_probe(const ProbeDataset& data, const ProbeConfig& config);

struct GroupError {
    std::size_t errors = 0;
    std::size_t total = 0;

    double rate() const { return total == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(total); }
    bool operator==(const GroupError&) const = default;
};

struct ProbeEvaluation {
    double errorRate = 0.0;
    std::size_t errors = 0;
    std::size_t total = 0;
    std::map<std::uint32_t, GroupError> perVerb;
    std::map<std::uint32_t, GroupError> perSubject;
    std::vector<Number> predictions;
};

/// Throws ValidationError on an empty dataset.
ProbeEvaluation eval_probe(const MlpProbe& probe, const ProbeDataset& data);

struct CrossValidation {
    std::vector<double> foldErrors;
    double meanError = 0.0;
};

/// K rotated splits of the given shape; reports each fold and the mean.
CrossValidation cross_validate_subject_probe(const scorer::EmbeddingModel& model, std::span<const Lexeme> nouns,
                                             std::span<const stimuli::SententialContext> contexts,
                                             std::size_t trainSubjects, std::size_t trainContexts, std::size_t folds,
                                             const ProbeConfig& config);

struct H3Report {
    double subjectProbeError = 0.0;
    double verbProbeError = 0.0;
    double combinedProbeError = 0.0;
    double observedSvaError = 0.0;
    double gap = 0.0;

    bool operator==(const H3Report&) const = default;
};

/// combined = 1 - (1 - subject)(1 - verb); gap = observed - combined.
/// Throws ValidationError for rates outside [0, 1].
H3Report h3_report(double subjectError, double verbError, double observedError);

std::string to_json(const H3Report& report);
H3Report h3_from_json(const std::string& text);
void write_h3_json(const H3Report& report, const std::filesystem::path& path);
void write_h3_csv(std::span<const H3Report> reports, std::span<const std::string> labels,
                  const std::filesystem::path& path);

} // namespace svafreq::probe
