#pragma once

#include "svafreq/corpus.hpp"
#include "svafreq/rng.hpp"
#include "svafreq/scorer.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace svafreq::neural {

/// Token inventory of a masked LM. Id 0 is [MASK], id 1 is [UNK].
class Vocabulary {
public:
    Vocabulary();
    explicit Vocabulary(const std::vector<std::string>& tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    std::optional<int> find(std::string_view token) const;
    int id_or_unknown(std::string_view token) const;
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    bool contains(std::string_view token) const { return find(token).has_value(); }

    static constexpr int kMask = 0;
    static constexpr int kUnknown = 1;

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

/// Corpus tokens seen at least `minCount` times, plus every `required` form
/// regardless of count. Non-special tokens are sorted.
Vocabulary build_vocabulary(const corpus::Corpus& corpus, std::uint64_t minCount, const std::set<std::string>& required);

struct NeuralScorerConfig {
    std::uint32_t embeddingDim = 32;
    std::uint32_t contextLayers = 1;
    std::uint32_t hiddenDim = 64;
    double maskProbability = 0.15;
    std::uint32_t epochs = 2;
    double learningRate = 3e-3;
    std::uint32_t batchSize = 32;
    std::uint32_t maxPositions = 64;
    double initScale = 0.1;
    double heldOutFraction = 0.01;
    std::uint32_t maxHeldOut = 2000;
    std::uint64_t seed = 1;

    /// Throws ValidationError on out-of-range values.
    void validate() const;

    bool operator==(const NeuralScorerConfig&) const = default;
};

/// One training/evaluation sequence with its masked positions already
/// replaced by Vocabulary::kMask in `ids`.
struct MaskedExample {
    std::vector<int> ids;
    std::vector<std::size_t> positions;
    std::vector<int> targets;
};

/// Token + position embeddings, a stack of bidirectional self-attention
/// mixing layers with a tanh feed-forward and residual connections, and an
/// output projection tied to the token embedding table.
///
/// Layer l:  C = softmax(Q K^T / sqrt(d)) X,  Q = X Wq^T,  K = X Wk^T
///           X' = X + W2 tanh(W1 [X ; C] + b1) + b2
/// Output:   logits = E x + b_out
class MaskedLanguageModel final : public scorer::Scorer, public scorer::EmbeddingModel {
public:
    MaskedLanguageModel(NeuralScorerConfig config, Vocabulary vocab);

    std::string id() const override { return "neural"; }
    std::vector<double> score(const scorer::ScoreRequest& request) const override;

    std::size_t embedding_dim() const override { return config_.embeddingDim; }
    std::vector<double> masked_state(const scorer::ScoreRequest& request) const override;
    std::vector<double> contextual_embedding(std::span<const std::string> tokens, std::size_t index) const override;

    /// Log-probabilities over the whole vocabulary at `position`.
    std::vector<double> log_probabilities(std::span<const int> ids, std::size_t position) const;

    /// Mean cross-entropy over every masked position of `batch`. When `grad`
    /// is non-null it receives d(loss)/d(parameters), same layout as parameters().
    double loss_and_gradient(std::span<const MaskedExample> batch, std::vector<double>* grad) const;

    const NeuralScorerConfig& config() const noexcept { return config_; }
    const Vocabulary& vocabulary() const noexcept { return vocab_; }
    const std::vector<double>& parameters() const noexcept { return params_; }
    std::vector<double>& mutable_parameters() noexcept { return params_; }

    /// Draws initial parameters from `seed`.
    void initialize(std::uint64_t seed);

    std::vector<int> encode(std::span<const std::string> tokens) const;

    /// Versioned little-endian binary: magic, version, config, vocabulary, parameters.
    void save(const std::filesystem::path& path) const;
    static std::shared_ptr<MaskedLanguageModel> load(const std::filesystem::path& path);

private:
    struct Workspace;

    std::size_t layer_offset(std::size_t layer) const;
    void forward(std::span<const int> ids, Workspace& ws) const;
    void backward(Workspace& ws, std::span<const double> dFinal, std::vector<double>& grad) const;

    NeuralScorerConfig config_;
    Vocabulary vocab_;
    std::vector<double> params_;
};

struct TrainResult {
    std::shared_ptr<MaskedLanguageModel> model;
    std::vector<double> epochLoss;
    double heldOutAccuracy = 0.0;
    std::size_t heldOutSentences = 0;
};

/// Seed-deterministic training with Adam on randomly masked tokens.
/// Throws TrainingDivergedError on a non-finite loss.
TrainResult train_mlm(const corpus::Corpus& corpus, const NeuralScorerConfig& config, Vocabulary vocab);

/// Masks each position with probability p (at least one per sentence).
MaskedExample mask_sentence(std::span<const int> ids, double p, Rng& rng);

/// Argmax accuracy when one seeded random position per sentence is masked.
double masked_accuracy(const MaskedLanguageModel& model, const corpus::Corpus& sentences, std::uint64_t seed);

} // namespace svafreq::neural
