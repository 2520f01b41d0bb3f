#pragma once

#include "svafreq/corpus.hpp"
#include "svafreq/stimuli.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace svafreq::scorer {

struct ScoreRequest {
    std::vector<std::string> tokens;
    std::size_t maskIndex = 0;
    std::vector<std::string> candidates;
    /// Position of the subject, when known. Used by the pair baseline only.
    std::optional<std::size_t> subjectIndex;

    /// Throws ValidationError unless tokens[maskIndex] is the only MASK and
    /// the candidates are distinct.
    void validate() const;
};

ScoreRequest make_request(const stimuli::Stimulus& stimulus);

/// Anything that assigns a log-probability (nats) to each candidate at the mask.
class Scorer {
public:
    virtual ~Scorer() = default;

    virtual std::string id() const = 0;

    /// One finite score per candidate, higher = more likely.
    /// Throws OutOfVocabularyError for an unknown candidate.
    virtual std::vector<double> score(const ScoreRequest& request) const = 0;
};

/// Read-only access to contextual representations, used by the probes.
class EmbeddingModel {
public:
    virtual ~EmbeddingModel() = default;

    virtual std::size_t embedding_dim() const = 0;

    /// Final contextual representation at request.maskIndex.
    virtual std::vector<double> masked_state(const ScoreRequest& request) const = 0;

    /// Final contextual representation at `index` of an arbitrary token
    /// sequence. Throws ValidationError when index is out of range.
    virtual std::vector<double> contextual_embedding(std::span<const std::string> tokens, std::size_t index) const = 0;
};

struct EvaluationRecord {
    std::uint64_t stimulusId = 0;
    stimuli::StimulusKind kind = stimuli::StimulusKind::Nonce;
    std::uint32_t contextId = 0;
    std::string subjectForm;
    Number subjectNumber = Number::Singular;
    std::string verbLemma;
    std::string targetForm;
    std::string competingForm;
    double scoreTarget = 0.0;
    double scoreCompeting = 0.0;
    bool correct = false;
    bool tie = false;
    /// Two-way softmax probability of the chosen candidate; 0.5 on a tie.
    double confidence = 0.5;
    std::string scorerId;

    bool operator==(const EvaluationRecord&) const = default;
};

/// Applies the strict "target scores higher" rule to a pair of scores.
EvaluationRecord decide(const stimuli::Stimulus& stimulus, double scoreTarget, double scoreCompeting,
                        std::string scorerId);

EvaluationRecord predict(const Scorer& scorer, const stimuli::Stimulus& stimulus);

/// Scores every stimulus in order.
std::vector<EvaluationRecord> evaluate(const Scorer& scorer, std::span<const stimuli::Stimulus> stimuli);

void write_records_csv(std::span<const EvaluationRecord> records, const std::filesystem::path& path);
std::vector<EvaluationRecord> read_records_csv(const std::filesystem::path& path);

/// Smoothed form-count baseline: log((count(c) + alpha) / Z), Z summing over
/// the candidates. Context-independent.
class UnigramScorer final : public Scorer {
public:
    explicit UnigramScorer(std::shared_ptr<const corpus::FrequencyIndex> index, double alpha = 1.0);

    std::string id() const override { return "unigram"; }
    std::vector<double> score(const ScoreRequest& request) const override;

private:
    std::shared_ptr<const corpus::FrequencyIndex> index_;
    double alpha_;
};

/// Subject/verb co-occurrence lookup: log((pairCount(s, c) + alpha) / Z).
/// Falls back to `backoff` when no candidate was ever seen with the subject,
/// or when the request has no usable subject.
class PairScorer final : public Scorer {
public:
    PairScorer(std::shared_ptr<const corpus::FrequencyIndex> index, std::shared_ptr<const Scorer> backoff,
               double alpha = 1.0);

    std::string id() const override { return "pair"; }
    std::vector<double> score(const ScoreRequest& request) const override;

    /// True when the lookup table has an entry for (subject, some candidate).
    bool has_entry(const ScoreRequest& request) const;

private:
    std::shared_ptr<const corpus::FrequencyIndex> index_;
    std::shared_ptr<const Scorer> backoff_;
    double alpha_;
};

std::shared_ptr<Scorer> make_unigram_scorer(std::shared_ptr<const corpus::FrequencyIndex> index);
std::shared_ptr<Scorer> make_pair_scorer(std::shared_ptr<const corpus::FrequencyIndex> index,
                                         std::shared_ptr<const Scorer> backoff);

} // namespace svafreq::scorer
