#include "svafreq/neural.hpp"

#include "svafreq/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

namespace svafreq::neural {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
    tokens_.emplace_back(kMaskToken);
    tokens_.emplace_back(kUnknownToken);
    for (const auto& t : tokens) {
        if (t == kMaskToken || t == kUnknownToken) continue;
        tokens_.push_back(t);
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw ValidationError("vocabulary: duplicate token '" + tokens_[i] + "'");
        }
    }
}

std::optional<int> Vocabulary::find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

int Vocabulary::id_or_unknown(std::string_view token) const {
    return find(token).value_or(kUnknown);
}

Vocabulary build_vocabulary(const corpus::Corpus& corpus, std::uint64_t minCount, const std::set<std::string>& required) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& s : corpus) {
        for (const auto& t : s.tokens) {
            ++counts[t];
        }
    }
    std::set<std::string> keep(required.begin(), required.end());
    for (const auto& [tok, n] : counts) {
        if (n >= minCount) keep.insert(tok);
    }
    keep.erase(std::string(kMaskToken));
    keep.erase(std::string(kUnknownToken));
    return Vocabulary(std::vector<std::string>(keep.begin(), keep.end()));
}

// ---------------------------------------------------------------------------
// Config

void NeuralScorerConfig::validate() const {
    if (embeddingDim == 0 || contextLayers == 0 || hiddenDim == 0) {
        throw ValidationError("neural config: dimensions and layer count must be positive");
    }
    if (!(maskProbability > 0.0 && maskProbability < 1.0)) {
        throw ValidationError("neural config: mask probability must lie in (0, 1)");
    }
    if (!(learningRate > 0.0) || batchSize == 0 || maxPositions < 2) {
        throw ValidationError("neural config: learning rate, batch size and max positions must be positive");
    }
    if (!(heldOutFraction >= 0.0 && heldOutFraction < 1.0)) {
        throw ValidationError("neural config: held-out fraction must lie in [0, 1)");
    }
}

// ---------------------------------------------------------------------------
// Model

namespace {

// Per-layer parameter block sizes.
struct LayerShape {
    std::size_t d;
    std::size_t h;

    std::size_t wq() const { return 0; }
    std::size_t wk() const { return d * d; }
    std::size_t w1() const { return 2 * d * d; }
    std::size_t b1() const { return w1() + h * 2 * d; }
    std::size_t w2() const { return b1() + h; }
    std::size_t b2() const { return w2() + d * h; }
    std::size_t size() const { return b2() + d; }
};

} // namespace

struct MaskedLanguageModel::Workspace {
    std::size_t len = 0;
    std::vector<int> ids;
    // X[l] is the input of layer l; X[layers] is the final representation.
    std::vector<std::vector<double>> X;
    std::vector<std::vector<double>> Q, K, A, C, U;
};

MaskedLanguageModel::MaskedLanguageModel(NeuralScorerConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
    config_.validate();
    const std::size_t d = config_.embeddingDim;
    const LayerShape shape{d, config_.hiddenDim};
    params_.assign(vocab_.size() * d + config_.maxPositions * d + vocab_.size() +
                       config_.contextLayers * shape.size(),
                   0.0);
}

std::size_t MaskedLanguageModel::layer_offset(std::size_t layer) const {
    const std::size_t d = config_.embeddingDim;
    const LayerShape shape{d, config_.hiddenDim};
    return vocab_.size() * d + config_.maxPositions * d + vocab_.size() + layer * shape.size();
}

void MaskedLanguageModel::initialize(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t d = config_.embeddingDim;
    const std::size_t h = config_.hiddenDim;
    const std::size_t V = vocab_.size();
    auto fill = [&](std::size_t offset, std::size_t count, double scale) {
        for (std::size_t i = 0; i < count; ++i) {
            params_[offset + i] = scale * rng.normal();
        }
    };
    std::fill(params_.begin(), params_.end(), 0.0);
    fill(0, V * d, config_.initScale);
    fill(V * d, config_.maxPositions * d, config_.initScale);
    const LayerShape shape{d, h};
    for (std::size_t l = 0; l < config_.contextLayers; ++l) {
        const std::size_t base = layer_offset(l);
        fill(base + shape.wq(), d * d, 1.0 / std::sqrt(static_cast<double>(d)));
        fill(base + shape.wk(), d * d, 1.0 / std::sqrt(static_cast<double>(d)));
        fill(base + shape.w1(), h * 2 * d, 1.0 / std::sqrt(static_cast<double>(2 * d)));
        fill(base + shape.w2(), d * h, 0.5 / std::sqrt(static_cast<double>(h)));
    }
}

std::vector<int> MaskedLanguageModel::encode(std::span<const std::string> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        ids.push_back(vocab_.id_or_unknown(t));
    }
    return ids;
}

void MaskedLanguageModel::forward(std::span<const int> ids, Workspace& ws) const {
    const std::size_t L = ids.size();
    const std::size_t d = config_.embeddingDim;
    const std::size_t h = config_.hiddenDim;
    const std::size_t layers = config_.contextLayers;
    if (L == 0 || L > config_.maxPositions) {
        throw ValidationError("sequence length " + std::to_string(L) + " outside [1, " +
                              std::to_string(config_.maxPositions) + "]");
    }
    ws.len = L;
    ws.ids.assign(ids.begin(), ids.end());
    ws.X.resize(layers + 1);
    ws.Q.resize(layers);
    ws.K.resize(layers);
    ws.A.resize(layers);
    ws.C.resize(layers);
    ws.U.resize(layers);

    const double* E = params_.data();
    const double* P = params_.data() + vocab_.size() * d;
    auto& X0 = ws.X[0];
    X0.resize(L * d);
    for (std::size_t i = 0; i < L; ++i) {
        const double* e = E + static_cast<std::size_t>(ids[i]) * d;
        const double* p = P + i * d;
        for (std::size_t k = 0; k < d; ++k) X0[i * d + k] = e[k] + p[k];
    }

    const LayerShape shape{d, h};
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t l = 0; l < layers; ++l) {
        const double* W = params_.data() + layer_offset(l);
        const double* Wq = W + shape.wq();
        const double* Wk = W + shape.wk();
        const double* W1 = W + shape.w1();
        const double* b1 = W + shape.b1();
        const double* W2 = W + shape.w2();
        const double* b2 = W + shape.b2();
        const auto& X = ws.X[l];
        auto& Q = ws.Q[l];
        auto& K = ws.K[l];
        auto& A = ws.A[l];
        auto& C = ws.C[l];
        auto& U = ws.U[l];
        auto& Y = ws.X[l + 1];
        Q.assign(L * d, 0.0);
        K.assign(L * d, 0.0);
        A.assign(L * L, 0.0);
        C.assign(L * d, 0.0);
        U.assign(L * h, 0.0);
        Y.assign(X.begin(), X.end());

        for (std::size_t i = 0; i < L; ++i) {
            const double* x = &X[i * d];
            for (std::size_t o = 0; o < d; ++o) {
                const double* wq = Wq + o * d;
                const double* wk = Wk + o * d;
                double q = 0.0;
                double kk = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    q += wq[k] * x[k];
                    kk += wk[k] * x[k];
                }
                Q[i * d + o] = q;
                K[i * d + o] = kk;
            }
        }
        for (std::size_t i = 0; i < L; ++i) {
            double* a = &A[i * L];
            double mx = -INFINITY;
            for (std::size_t j = 0; j < L; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) s += Q[i * d + k] * K[j * d + k];
                a[j] = s * scale;
                mx = std::max(mx, a[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < L; ++j) {
                a[j] = std::exp(a[j] - mx);
                z += a[j];
            }
            for (std::size_t j = 0; j < L; ++j) {
                a[j] /= z;
                const double w = a[j];
                for (std::size_t k = 0; k < d; ++k) C[i * d + k] += w * X[j * d + k];
            }
        }
        for (std::size_t i = 0; i < L; ++i) {
            const double* x = &X[i * d];
            const double* c = &C[i * d];
            double* u = &U[i * h];
            for (std::size_t o = 0; o < h; ++o) {
                const double* w = W1 + o * 2 * d;
                double s = b1[o];
                for (std::size_t k = 0; k < d; ++k) s += w[k] * x[k];
                for (std::size_t k = 0; k < d; ++k) s += w[d + k] * c[k];
                u[o] = std::tanh(s);
            }
            double* y = &Y[i * d];
            for (std::size_t o = 0; o < d; ++o) {
                const double* w = W2 + o * h;
                double s = b2[o];
                for (std::size_t k = 0; k < h; ++k) s += w[k] * u[k];
                y[o] += s;
            }
        }
    }
}

void MaskedLanguageModel::backward(Workspace& ws, std::span<const double> dFinal, std::vector<double>& grad) const {
    const std::size_t L = ws.len;
    const std::size_t d = config_.embeddingDim;
    const std::size_t h = config_.hiddenDim;
    const LayerShape shape{d, h};
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<double> dX(dFinal.begin(), dFinal.end());
    std::vector<double> dIn(L * d), dU(h), dC(L * d), dA(L * L), dQ(L * d), dK(L * d);
    for (std::size_t l = config_.contextLayers; l-- > 0;) {
        const double* W = params_.data() + layer_offset(l);
        double* G = grad.data() + layer_offset(l);
        const double* Wq = W + shape.wq();
        const double* Wk = W + shape.wk();
        const double* W1 = W + shape.w1();
        const double* W2 = W + shape.w2();
        const auto& X = ws.X[l];
        const auto& Q = ws.Q[l];
        const auto& K = ws.K[l];
        const auto& A = ws.A[l];
        const auto& C = ws.C[l];
        const auto& U = ws.U[l];

        dIn = dX;  // residual path
        std::fill(dC.begin(), dC.end(), 0.0);
        for (std::size_t i = 0; i < L; ++i) {
            const double* g = &dX[i * d];
            const double* u = &U[i * h];
            // b2, W2
            for (std::size_t o = 0; o < d; ++o) {
                G[shape.b2() + o] += g[o];
                double* gw = G + shape.w2() + o * h;
                for (std::size_t k = 0; k < h; ++k) gw[k] += g[o] * u[k];
            }
            for (std::size_t k = 0; k < h; ++k) {
                double s = 0.0;
                for (std::size_t o = 0; o < d; ++o) s += g[o] * W2[o * h + k];
                dU[k] = s * (1.0 - u[k] * u[k]);
            }
            // b1, W1, and back into [x ; c]
            const double* x = &X[i * d];
            const double* c = &C[i * d];
            double* dx = &dIn[i * d];
            double* dc = &dC[i * d];
            for (std::size_t o = 0; o < h; ++o) {
                const double gp = dU[o];
                if (gp == 0.0) continue;
                G[shape.b1() + o] += gp;
                double* gw = G + shape.w1() + o * 2 * d;
                const double* w = W1 + o * 2 * d;
                for (std::size_t k = 0; k < d; ++k) {
                    gw[k] += gp * x[k];
                    gw[d + k] += gp * c[k];
                    dx[k] += gp * w[k];
                    dc[k] += gp * w[d + k];
                }
            }
        }
        // C = A X
        for (std::size_t i = 0; i < L; ++i) {
            const double* dc = &dC[i * d];
            for (std::size_t j = 0; j < L; ++j) {
                const double* xj = &X[j * d];
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) s += dc[k] * xj[k];
                dA[i * L + j] = s;
                const double a = A[i * L + j];
                double* dxj = &dIn[j * d];
                for (std::size_t k = 0; k < d; ++k) dxj[k] += a * dc[k];
            }
        }
        // softmax rows, then S = scale * Q K^T
        std::fill(dQ.begin(), dQ.end(), 0.0);
        std::fill(dK.begin(), dK.end(), 0.0);
        for (std::size_t i = 0; i < L; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < L; ++j) dot += A[i * L + j] * dA[i * L + j];
            for (std::size_t j = 0; j < L; ++j) {
                const double dS = A[i * L + j] * (dA[i * L + j] - dot) * scale;
                if (dS == 0.0) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    dQ[i * d + k] += dS * K[j * d + k];
                    dK[j * d + k] += dS * Q[i * d + k];
                }
            }
        }
        // Q = X Wq^T, K = X Wk^T
        for (std::size_t i = 0; i < L; ++i) {
            const double* x = &X[i * d];
            double* dx = &dIn[i * d];
            for (std::size_t o = 0; o < d; ++o) {
                const double gq = dQ[i * d + o];
                const double gk = dK[i * d + o];
                double* gwq = G + shape.wq() + o * d;
                double* gwk = G + shape.wk() + o * d;
                const double* wq = Wq + o * d;
                const double* wk = Wk + o * d;
                for (std::size_t k = 0; k < d; ++k) {
                    gwq[k] += gq * x[k];
                    gwk[k] += gk * x[k];
                    dx[k] += gq * wq[k] + gk * wk[k];
                }
            }
        }
        dX.swap(dIn);
    }
    double* gE = grad.data();
    double* gP = grad.data() + vocab_.size() * d;
    for (std::size_t i = 0; i < L; ++i) {
        double* ge = gE + static_cast<std::size_t>(ws.ids[i]) * d;
        double* gp = gP + i * d;
        for (std::size_t k = 0; k < d; ++k) {
            ge[k] += dX[i * d + k];
            gp[k] += dX[i * d + k];
        }
    }
}

namespace {

// log-softmax of E x + b over the vocabulary
void output_log_probs(const double* E, const double* bout, std::size_t V, std::size_t d, const double* x,
                      std::vector<double>& out) {
    out.resize(V);
    double mx = -INFINITY;
    for (std::size_t v = 0; v < V; ++v) {
        const double* e = E + v * d;
        double s = bout[v];
        for (std::size_t k = 0; k < d; ++k) s += e[k] * x[k];
        out[v] = s;
        mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(out[v] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t v = 0; v < V; ++v) out[v] -= lz;
}

} // namespace

double MaskedLanguageModel::loss_and_gradient(std::span<const MaskedExample> batch, std::vector<double>* grad) const {
    const std::size_t d = config_.embeddingDim;
    const std::size_t V = vocab_.size();
    std::size_t total = 0;
    for (const auto& ex : batch) total += ex.positions.size();
    if (total == 0) {
        throw ValidationError("loss_and_gradient: batch has no masked positions");
    }
    if (grad) grad->assign(params_.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(total);
    const double* E = params_.data();
    const std::size_t boutOffset = V * d + config_.maxPositions * d;
    const double* bout = params_.data() + boutOffset;

    Workspace ws;
    std::vector<double> lp;
    std::vector<double> dFinal;
    double loss = 0.0;
    for (const auto& ex : batch) {
        forward(ex.ids, ws);
        const auto& Xf = ws.X.back();
        if (grad) dFinal.assign(ws.len * d, 0.0);
        for (std::size_t m = 0; m < ex.positions.size(); ++m) {
            const std::size_t pos = ex.positions[m];
            const double* x = &Xf[pos * d];
            output_log_probs(E, bout, V, d, x, lp);
            loss -= lp[static_cast<std::size_t>(ex.targets[m])];
            if (!grad) continue;
            double* gE = grad->data();
            double* gb = grad->data() + boutOffset;
            double* dx = &dFinal[pos * d];
            for (std::size_t v = 0; v < V; ++v) {
                double g = std::exp(lp[v]);
                if (static_cast<int>(v) == ex.targets[m]) g -= 1.0;
                g *= inv;
                gb[v] += g;
                const double* e = E + v * d;
                double* ge = gE + v * d;
                for (std::size_t k = 0; k < d; ++k) {
                    ge[k] += g * x[k];
                    dx[k] += g * e[k];
                }
            }
        }
        if (grad) backward(ws, dFinal, *grad);
    }
    return loss * inv;
}

std::vector<double> MaskedLanguageModel::log_probabilities(std::span<const int> ids, std::size_t position) const {
    Workspace ws;
    forward(ids, ws);
    const std::size_t d = config_.embeddingDim;
    std::vector<double> lp;
    output_log_probs(params_.data(), params_.data() + vocab_.size() * d + config_.maxPositions * d, vocab_.size(), d,
                     &ws.X.back()[position * d], lp);
    return lp;
}

namespace {

// Window of at most `max` tokens that contains `index`.
std::pair<std::size_t, std::size_t> window_for(std::size_t len, std::size_t index, std::size_t max) {
    if (len <= max) return {0, len};
    std::size_t start = index >= max / 2 ? index - max / 2 : 0;
    start = std::min(start, len - max);
    return {start, start + max};
}

} // namespace

std::vector<double> MaskedLanguageModel::score(const scorer::ScoreRequest& request) const {
    request.validate();
    std::vector<int> candidateIds;
    for (const auto& c : request.candidates) {
        auto id = vocab_.find(c);
        if (!id || *id == Vocabulary::kMask || *id == Vocabulary::kUnknown) {
            throw OutOfVocabularyError(c);
        }
        candidateIds.push_back(*id);
    }
    const auto [lo, hi] = window_for(request.tokens.size(), request.maskIndex, config_.maxPositions);
    const auto ids = encode(std::span(request.tokens).subspan(lo, hi - lo));
    const auto lp = log_probabilities(ids, request.maskIndex - lo);
    std::vector<double> out;
    for (int id : candidateIds) out.push_back(lp[static_cast<std::size_t>(id)]);
    return out;
}

std::vector<double> MaskedLanguageModel::contextual_embedding(std::span<const std::string> tokens,
                                                              std::size_t index) const {
    if (index >= tokens.size()) {
        throw ValidationError("contextual_embedding: index out of range");
    }
    const auto [lo, hi] = window_for(tokens.size(), index, config_.maxPositions);
    const auto ids = encode(tokens.subspan(lo, hi - lo));
    Workspace ws;
    forward(ids, ws);
    const std::size_t d = config_.embeddingDim;
    const auto& Xf = ws.X.back();
    const std::size_t at = index - lo;
    return std::vector<double>(Xf.begin() + static_cast<std::ptrdiff_t>(at * d),
                               Xf.begin() + static_cast<std::ptrdiff_t>((at + 1) * d));
}

std::vector<double> MaskedLanguageModel::masked_state(const scorer::ScoreRequest& request) const {
    if (request.maskIndex >= request.tokens.size() || request.tokens[request.maskIndex] != kMaskToken) {
        throw ValidationError("masked_state: mask index does not point at " + std::string(kMaskToken));
    }
    return contextual_embedding(request.tokens, request.maskIndex);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'V', 'A', 'F', 'M', 'L', 'M', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    void u32(std::uint32_t v) { bytes(v, 4); }
    void u64(std::uint64_t v) { bytes(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

private:
    void bytes(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    std::ostream& out_;
};

class Reader {
public:
    Reader(std::istream& in, std::string src) : in_(in), src_(std::move(src)) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
    std::uint64_t u64() { return bytes(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const auto n = u32();
        if (n > (1u << 20)) fail("implausible string length");
        std::string s(n, '\0');
        in_.read(s.data(), n);
        if (!in_) fail("truncated string");
        return s;
    }
    [[noreturn]] void fail(const std::string& what) { throw IoError(src_ + ": corrupt checkpoint (" + what + ")"); }

private:
    std::uint64_t bytes(int n) {
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            const int c = in_.get();
            if (c == EOF) fail("unexpected end of file");
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
        }
        return v;
    }
    std::istream& in_;
    std::string src_;
};

} // namespace

void MaskedLanguageModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    out.write(kMagic, sizeof kMagic);
    Writer w(out);
    w.u32(kCheckpointVersion);
    w.u32(config_.embeddingDim);
    w.u32(config_.contextLayers);
    w.u32(config_.hiddenDim);
    w.f64(config_.maskProbability);
    w.u32(config_.epochs);
    w.f64(config_.learningRate);
    w.u32(config_.batchSize);
    w.u32(config_.maxPositions);
    w.f64(config_.initScale);
    w.f64(config_.heldOutFraction);
    w.u32(config_.maxHeldOut);
    w.u64(config_.seed);
    w.u32(static_cast<std::uint32_t>(vocab_.size()));
    for (const auto& t : vocab_.tokens()) w.str(t);
    w.u64(params_.size());
    for (double p : params_) w.f64(p);
    if (!out) {
        throw IoError("write error on " + path.string());
    }
}

std::shared_ptr<MaskedLanguageModel> MaskedLanguageModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    Reader r(in, path.string());
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("bad magic");
    if (r.u32() != kCheckpointVersion) r.fail("unsupported version");
    NeuralScorerConfig c;
    c.embeddingDim = r.u32();
    c.contextLayers = r.u32();
    c.hiddenDim = r.u32();
    c.maskProbability = r.f64();
    c.epochs = r.u32();
    c.learningRate = r.f64();
    c.batchSize = r.u32();
    c.maxPositions = r.u32();
    c.initScale = r.f64();
    c.heldOutFraction = r.f64();
    c.maxHeldOut = r.u32();
    c.seed = r.u64();
    const auto vocabSize = r.u32();
    std::vector<std::string> tokens;
    for (std::uint32_t i = 0; i < vocabSize; ++i) tokens.push_back(r.str());
    if (tokens.size() < 2 || tokens[0] != kMaskToken || tokens[1] != kUnknownToken) r.fail("bad vocabulary");
    tokens.erase(tokens.begin(), tokens.begin() + 2);
    auto model = std::make_shared<MaskedLanguageModel>(c, Vocabulary(tokens));
    if (r.u64() != model->params_.size()) r.fail("parameter count does not match config");
    for (auto& p : model->params_) p = r.f64();
    return model;
}

// ---------------------------------------------------------------------------
// Training

MaskedExample mask_sentence(std::span<const int> ids, double p, Rng& rng) {
    MaskedExample ex;
    ex.ids.assign(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (rng.bernoulli(p)) ex.positions.push_back(i);
    }
    if (ex.positions.empty() && !ids.empty()) {
        ex.positions.push_back(static_cast<std::size_t>(rng.below(ids.size())));
    }
    for (auto pos : ex.positions) {
        ex.targets.push_back(ex.ids[pos]);
        ex.ids[pos] = Vocabulary::kMask;
    }
    return ex;
}

namespace {

double masked_accuracy_ids(const MaskedLanguageModel& model, std::span<const std::vector<int>> sentences,
                           std::uint64_t seed) {
    if (sentences.empty()) return 0.0;
    Rng rng(seed);
    std::size_t hits = 0;
    for (const auto& ids : sentences) {
        const auto pos = static_cast<std::size_t>(rng.below(ids.size()));
        std::vector<int> masked = ids;
        masked[pos] = Vocabulary::kMask;
        const auto lp = model.log_probabilities(masked, pos);
        const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
        hits += best == ids[pos] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(sentences.size());
}

} // namespace

double masked_accuracy(const MaskedLanguageModel& model, const corpus::Corpus& sentences, std::uint64_t seed) {
    std::vector<std::vector<int>> ids;
    for (const auto& s : sentences) {
        if (s.tokens.empty()) continue;
        auto e = model.encode(s.tokens);
        if (e.size() > model.config().maxPositions) e.resize(model.config().maxPositions);
        ids.push_back(std::move(e));
    }
    return masked_accuracy_ids(model, ids, seed);
}

TrainResult train_mlm(const corpus::Corpus& corpus, const NeuralScorerConfig& config, Vocabulary vocab) {
    config.validate();
    auto model = std::make_shared<MaskedLanguageModel>(config, std::move(vocab));

    std::vector<std::vector<int>> all;
    for (const auto& s : corpus) {
        if (s.tokens.empty()) continue;
        auto ids = model->encode(s.tokens);
        if (ids.size() > config.maxPositions) ids.resize(config.maxPositions);
        all.push_back(std::move(ids));
    }
    if (all.empty()) {
        throw ValidationError("train_mlm: corpus is empty");
    }

    // Held-out split
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    Rng splitRng(derive_seed(config.seed, "heldout"));
    splitRng.shuffle(order);
    const auto wanted = static_cast<std::size_t>(std::floor(config.heldOutFraction * static_cast<double>(all.size())));
    const std::size_t held = std::min<std::size_t>(wanted, config.maxHeldOut);
    std::vector<std::vector<int>> train;
    std::vector<std::vector<int>> heldOut;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < held ? heldOut : train).push_back(all[order[i]]);
    }
    if (train.empty()) {
        train = heldOut;
    }
    if (heldOut.empty()) {
        // evaluate on (a sample of) the training sentences instead
        for (std::size_t i = 0; i < std::min<std::size_t>(train.size(), config.maxHeldOut); ++i) {
            heldOut.push_back(train[order[i] % train.size()]);
        }
    }

    model->initialize(derive_seed(config.seed, "init"));
    auto& params = model->mutable_parameters();
    std::vector<double> m(params.size(), 0.0);
    std::vector<double> v(params.size(), 0.0);
    std::vector<double> grad;
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    std::uint64_t step = 0;

    TrainResult result;
    std::vector<std::size_t> perm(train.size());
    std::vector<MaskedExample> batch;
    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(perm.begin(), perm.end(), 0);
        Rng orderRng(derive_seed(config.seed, "order/" + std::to_string(epoch)));
        orderRng.shuffle(perm);
        Rng maskRng(derive_seed(config.seed, "mask/" + std::to_string(epoch)));
        double epochLoss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < perm.size(); start += config.batchSize) {
            batch.clear();
            const std::size_t stop = std::min(perm.size(), start + config.batchSize);
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(mask_sentence(train[perm[i]], config.maskProbability, maskRng));
            }
            const double loss = model->loss_and_gradient(batch, &grad);
            if (!std::isfinite(loss)) {
                throw TrainingDivergedError("train_mlm: non-finite loss " + std::to_string(loss) + " at epoch " +
                                            std::to_string(epoch) + ", step " + std::to_string(step) +
                                            " (learning rate " + std::to_string(config.learningRate) + ")");
            }
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                params[i] -= config.learningRate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
            }
            epochLoss += loss;
            ++batches;
        }
        result.epochLoss.push_back(epochLoss / static_cast<double>(std::max<std::size_t>(batches, 1)));
    }
    result.heldOutAccuracy = masked_accuracy_ids(*model, heldOut, derive_seed(config.seed, "heldout/eval"));
    result.heldOutSentences = heldOut.size();
    result.model = std::move(model);
    return result;
}

} // namespace svafreq::neural
