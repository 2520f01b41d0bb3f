#include "svafreq/probe.hpp"

#include "svafreq/error.hpp"
#include "svafreq/rng.hpp"
#include "svafreq/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

namespace svafreq::probe {

void ProbeDataset::add(ProbeItem item) {
    if (!items_.empty() && item.vector.size() != dim()) {
        throw ValidationError("probe dataset: vector of dimension " + std::to_string(item.vector.size()) +
                              ", expected " + std::to_string(dim()));
    }
    if (item.vector.empty()) {
        throw ValidationError("probe dataset: empty vector");
    }
    items_.push_back(std::move(item));
}

std::size_t ProbeDataset::count(Number label) const {
    return static_cast<std::size_t>(
        std::count_if(items_.begin(), items_.end(), [&](const ProbeItem& i) { return i.label == label; }));
}

namespace {

std::string optional_id(const std::optional<std::uint32_t>& id) {
    return id ? std::to_string(*id) : std::string();
}

std::optional<std::uint32_t> parse_optional_id(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return static_cast<std::uint32_t>(std::stoul(s));
}

} // namespace

void save_dataset_csv(const ProbeDataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "label,subject_id,verb_id,context_id";
    for (std::size_t k = 0; k < data.dim(); ++k) out << ",x" << k;
    out << '\n';
    for (const auto& item : data.items()) {
        out << to_string(item.label) << ',' << optional_id(item.keys.subjectId) << ','
            << optional_id(item.keys.verbId) << ',' << item.keys.contextId;
        for (double x : item.vector) out << ',' << text::format_double(x);
        out << '\n';
    }
}

ProbeDataset load_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("label,subject_id,verb_id,context_id")) {
        throw ParseError(path.string(), 1, "unexpected probe dataset header");
    }
    const std::size_t dim = text::split(line, ',').size() - 4;
    ProbeDataset data;
    std::size_t lineNo = 1;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.empty()) continue;
        const auto f = text::split(line, ',');
        if (f.size() != dim + 4) {
            throw ParseError(path.string(), lineNo, "expected " + std::to_string(dim + 4) + " fields");
        }
        try {
            ProbeItem item;
            item.label = parse_number(f[0]);
            item.keys.subjectId = parse_optional_id(f[1]);
            item.keys.verbId = parse_optional_id(f[2]);
            item.keys.contextId = static_cast<std::uint32_t>(std::stoul(f[3]));
            for (std::size_t k = 0; k < dim; ++k) item.vector.push_back(std::stod(f[4 + k]));
            data.add(std::move(item));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(path.string(), lineNo, e.what());
        }
    }
    return data;
}

void ProbeConfig::validate() const {
    if (hiddenDim == 0 || epochs == 0 || batchSize == 0 || !(learningRate > 0.0)) {
        throw ValidationError("probe config: hidden dim, epochs, batch size and learning rate must be positive");
    }
}

// ---------------------------------------------------------------------------
// Datasets

SubjectSplit rotated_split(std::size_t nouns, std::size_t contexts, std::size_t trainSubjects,
                           std::size_t trainContexts, std::size_t rotation, std::size_t folds) {
    if (folds == 0 || trainSubjects > nouns || trainContexts > contexts) {
        throw ValidationError("subject split: train shape " + std::to_string(trainSubjects) + "x" +
                              std::to_string(trainContexts) + " does not fit " + std::to_string(nouns) + "x" +
                              std::to_string(contexts));
    }
    SubjectSplit s;
    const std::size_t so = rotation * nouns / folds;
    const std::size_t co = rotation * contexts / folds;
    for (std::size_t i = 0; i < trainSubjects; ++i) s.trainSubjects.push_back(static_cast<std::uint32_t>((so + i) % nouns));
    for (std::size_t i = 0; i < trainContexts; ++i) {
        s.trainContexts.push_back(static_cast<std::uint32_t>((co + i) % contexts));
    }
    std::sort(s.trainSubjects.begin(), s.trainSubjects.end());
    std::sort(s.trainContexts.begin(), s.trainContexts.end());
    return s;
}

ProbeSplit build_subject_probe_dataset(const scorer::EmbeddingModel& model, std::span<const Lexeme> nouns,
                                       std::span<const stimuli::SententialContext> contexts,
                                       const SubjectSplit& split) {
    const std::set<std::uint32_t> trainS(split.trainSubjects.begin(), split.trainSubjects.end());
    const std::set<std::uint32_t> trainC(split.trainContexts.begin(), split.trainContexts.end());
    if ((!trainS.empty() && *trainS.rbegin() >= nouns.size()) ||
        (!trainC.empty() && *trainC.rbegin() >= contexts.size())) {
        throw ValidationError("subject split: index out of range");
    }
    if (trainS.size() >= nouns.size() || trainC.size() >= contexts.size()) {
        throw ValidationError("subject split leaves the evaluation set empty");
    }
    ProbeSplit out;
    for (std::uint32_t c = 0; c < contexts.size(); ++c) {
        const bool cTrain = trainC.contains(c);
        for (std::uint32_t n = 0; n < nouns.size(); ++n) {
            const bool nTrain = trainS.contains(n);
            if (cTrain != nTrain) continue;  // mixed pairs belong to neither side
            for (Number number : {Number::Singular, Number::Plural}) {
                scorer::ScoreRequest req;
                req.tokens = contexts[c].render(nouns[n].form(number), kMaskToken);
                req.maskIndex = contexts[c].verb_index();
                ProbeItem item{model.masked_state(req), number, GroupKeys{n, std::nullopt, contexts[c].id}};
                (cTrain ? out.train : out.eval).add(std::move(item));
            }
        }
    }
    return out;
}

ProbeSplit build_verb_probe_dataset(const scorer::EmbeddingModel& model, std::span<const Lexeme> trainVerbs,
                                    std::span<const Lexeme> evalVerbs,
                                    std::span<const stimuli::SententialContext> contexts) {
    std::set<std::string> trainLemmas;
    for (const auto& v : trainVerbs) trainLemmas.insert(v.lemma);
    for (const auto& v : evalVerbs) {
        if (trainLemmas.contains(v.lemma)) {
            throw ValidationError("verb probe: '" + v.lemma + "' is in both the training and evaluation verbs");
        }
    }
    ProbeSplit out;
    auto fill = [&](std::span<const Lexeme> verbs, ProbeDataset& data, std::uint32_t firstId) {
        for (std::uint32_t i = 0; i < verbs.size(); ++i) {
            for (Number number : {Number::Singular, Number::Plural}) {
                for (const auto& ctx : contexts) {
                    const auto tokens = ctx.render(kMaskToken, verbs[i].form(number));
                    data.add(ProbeItem{model.contextual_embedding(tokens, ctx.verb_index()), number,
                                       GroupKeys{std::nullopt, firstId + i, ctx.id}});
                }
            }
        }
    };
    fill(trainVerbs, out.train, 0);
    fill(evalVerbs, out.eval, static_cast<std::uint32_t>(trainVerbs.size()));
    return out;
}

ProbeSplit build_verb_probe_dataset(const scorer::EmbeddingModel& model, std::span<const Lexeme> verbs,
                                    std::span<const stimuli::SententialContext> contexts,
                                    const std::set<std::string>& voiLemmas) {
    std::vector<Lexeme> train;
    std::vector<Lexeme> eval;
    std::set<std::string> found;
    for (const auto& v : verbs) {
        if (voiLemmas.contains(v.lemma)) {
            eval.push_back(v);
            found.insert(v.lemma);
        } else {
            train.push_back(v);
        }
    }
    for (const auto& l : voiLemmas) {
        if (!found.contains(l)) throw ValidationError("verb probe: VOI '" + l + "' is not in the verb list");
    }
    return build_verb_probe_dataset(model, train, eval, contexts);
}

// ---------------------------------------------------------------------------
// MLP

MlpProbe::MlpProbe(std::size_t inputDim, std::size_t hiddenDim)
    : inputDim_(inputDim), hiddenDim_(hiddenDim), mean_(inputDim, 0.0), scale_(inputDim, 1.0),
      params_(hiddenDim * inputDim + hiddenDim + 2 * hiddenDim + 2, 0.0) {}

namespace {

struct MlpView {
    std::size_t d;
    std::size_t h;

    std::size_t w1() const { return 0; }
    std::size_t b1() const { return h * d; }
    std::size_t w2() const { return b1() + h; }
    std::size_t b2() const { return w2() + 2 * h; }
};

// Returns the two logits; fills the hidden activations.
std::array<double, 2> mlp_forward(const MlpView& v, const std::vector<double>& p, const double* x,
                                  std::vector<double>& u) {
    u.resize(v.h);
    for (std::size_t o = 0; o < v.h; ++o) {
        double s = p[v.b1() + o];
        const double* w = &p[v.w1() + o * v.d];
        for (std::size_t k = 0; k < v.d; ++k) s += w[k] * x[k];
        u[o] = std::tanh(s);
    }
    std::array<double, 2> logits{};
    for (std::size_t c = 0; c < 2; ++c) {
        double s = p[v.b2() + c];
        const double* w = &p[v.w2() + c * v.h];
        for (std::size_t k = 0; k < v.h; ++k) s += w[k] * u[k];
        logits[c] = s;
    }
    return logits;
}

double softmax_plural(const std::array<double, 2>& z) {
    return 1.0 / (1.0 + std::exp(z[0] - z[1]));
}

} // namespace

double MlpProbe::prob_plural(std::span<const double> x) const {
    if (x.size() != inputDim_) {
        throw ValidationError("probe: input of dimension " + std::to_string(x.size()) + ", expected " +
                              std::to_string(inputDim_));
    }
    std::vector<double> xs(inputDim_);
    for (std::size_t k = 0; k < inputDim_; ++k) xs[k] = (x[k] - mean_[k]) * scale_[k];
    std::vector<double> u;
    return softmax_plural(mlp_forward(MlpView{inputDim_, hiddenDim_}, params_, xs.data(), u));
}

Number MlpProbe::predict(std::span<const double> x) const {
    return prob_plural(x) > 0.5 ? Number::Plural : Number::Singular;
}

MlpProbe train_probe(const ProbeDataset& data, const ProbeConfig& config) {
    config.validate();
    if (data.empty()) {
        throw ValidationError("train_probe: empty dataset");
    }
    if (data.count(Number::Singular) == 0 || data.count(Number::Plural) == 0) {
        throw ValidationError("train_probe: dataset has a single class");
    }
    const std::size_t d = data.dim();
    const std::size_t n = data.size();
    MlpProbe probe(d, config.hiddenDim);
    const MlpView view{d, config.hiddenDim};

    // Canonical order: independent of how the caller listed the items.
    std::vector<std::size_t> canon(n);
    std::iota(canon.begin(), canon.end(), 0);
    const auto& items = data.items();
    std::stable_sort(canon.begin(), canon.end(), [&](std::size_t a, std::size_t b) {
        if (items[a].vector != items[b].vector) return items[a].vector < items[b].vector;
        return items[a].label < items[b].label;
    });

    for (std::size_t k = 0; k < d; ++k) {
        double m = 0.0;
        for (auto i : canon) m += items[i].vector[k];
        m /= static_cast<double>(n);
        double var = 0.0;
        for (auto i : canon) var += (items[i].vector[k] - m) * (items[i].vector[k] - m);
        const double sd = std::sqrt(var / static_cast<double>(n));
        probe.mean_[k] = m;
        probe.scale_[k] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    std::vector<double> xs(n * d);
    std::vector<int> ys(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto& item = items[canon[r]];
        for (std::size_t k = 0; k < d; ++k) xs[r * d + k] = (item.vector[k] - probe.mean_[k]) * probe.scale_[k];
        ys[r] = item.label == Number::Plural ? 1 : 0;
    }

    auto& p = probe.params_;
    Rng init(derive_seed(config.seed, "probe/init"));
    for (std::size_t i = 0; i < view.h * d; ++i) p[view.w1() + i] = init.normal() / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < 2 * view.h; ++i) {
        p[view.w2() + i] = init.normal() / std::sqrt(static_cast<double>(view.h));
    }

    std::vector<double> grad(p.size()), m(p.size(), 0.0), v(p.size(), 0.0), u, du(view.h);
    std::vector<std::size_t> order(n);
    std::uint64_t step = 0;
    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(derive_seed(config.seed, "probe/epoch/" + std::to_string(epoch)));
        shuffle.shuffle(order);
        for (std::size_t start = 0; start < n; start += config.batchSize) {
            const std::size_t stop = std::min(n, start + config.batchSize);
            const double inv = 1.0 / static_cast<double>(stop - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = start; b < stop; ++b) {
                const double* x = &xs[order[b] * d];
                const double pp = softmax_plural(mlp_forward(view, p, x, u));
                const double dz[2] = {((1.0 - pp) - (ys[order[b]] == 0 ? 1.0 : 0.0)) * inv,
                                      (pp - (ys[order[b]] == 1 ? 1.0 : 0.0)) * inv};
                for (std::size_t c = 0; c < 2; ++c) {
                    grad[view.b2() + c] += dz[c];
                    for (std::size_t k = 0; k < view.h; ++k) grad[view.w2() + c * view.h + k] += dz[c] * u[k];
                }
                for (std::size_t k = 0; k < view.h; ++k) {
                    du[k] = (dz[0] * p[view.w2() + k] + dz[1] * p[view.w2() + view.h + k]) * (1.0 - u[k] * u[k]);
                    grad[view.b1() + k] += du[k];
                    double* gw = &grad[view.w1() + k * d];
                    for (std::size_t j = 0; j < d; ++j) gw[j] += du[k] * x[j];
                }
            }
            ++step;
            const double c1 = 1.0 - std::pow(0.9, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(0.999, static_cast<double>(step));
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = 0.9 * m[i] + 0.1 * grad[i];
                v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
                p[i] -= config.learningRate * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
            }
        }
    }
    return probe;
}

ProbeEvaluation eval_probe(const MlpProbe& probe, const ProbeDataset& data) {
    if (data.empty()) {
        throw ValidationError("eval_probe: empty dataset");
    }
    ProbeEvaluation ev;
    for (const auto& item : data.items()) {
        const Number pred = probe.predict(item.vector);
        const bool wrong = pred != item.label;
        ev.predictions.push_back(pred);
        ev.errors += wrong ? 1 : 0;
        ++ev.total;
        if (item.keys.verbId) {
            auto& g = ev.perVerb[*item.keys.verbId];
            g.errors += wrong ? 1 : 0;
            ++g.total;
        }
        if (item.keys.subjectId) {
            auto& g = ev.perSubject[*item.keys.subjectId];
            g.errors += wrong ? 1 : 0;
            ++g.total;
        }
    }
    ev.errorRate = static_cast<double>(ev.errors) / static_cast<double>(ev.total);
    return ev;
}

CrossValidation cross_validate_subject_probe(const scorer::EmbeddingModel& model, std::span<const Lexeme> nouns,
                                             std::span<const stimuli::SententialContext> contexts,
                                             std::size_t trainSubjects, std::size_t trainContexts, std::size_t folds,
                                             const ProbeConfig& config) {
    if (folds == 0) {
        throw ValidationError("cross-validation needs at least one fold");
    }
    CrossValidation cv;
    for (std::size_t r = 0; r < folds; ++r) {
        const auto split = rotated_split(nouns.size(), contexts.size(), trainSubjects, trainContexts, r, folds);
        const auto data = build_subject_probe_dataset(model, nouns, contexts, split);
        const auto probe = train_probe(data.train, config);
        cv.foldErrors.push_back(eval_probe(probe, data.eval).errorRate);
    }
    cv.meanError = std::accumulate(cv.foldErrors.begin(), cv.foldErrors.end(), 0.0) / static_cast<double>(folds);
    return cv;
}

// ---------------------------------------------------------------------------
// H3

H3Report h3_report(double subjectError, double verbError, double observedError) {
    for (double r : {subjectError, verbError, observedError}) {
        if (!(r >= 0.0 && r <= 1.0)) {
            throw ValidationError("h3_report: rate " + text::format_double(r) + " outside [0, 1]");
        }
    }
    H3Report h;
    h.subjectProbeError = subjectError;
    h.verbProbeError = verbError;
    h.combinedProbeError = 1.0 - (1.0 - subjectError) * (1.0 - verbError);
    h.observedSvaError = observedError;
    h.gap = observedError - h.combinedProbeError;
    return h;
}

namespace {

nlohmann::ordered_json h3_json(const H3Report& r) {
    nlohmann::ordered_json j;
    j["schema"] = "svafreq.h3/1";
    j["subject_probe_error"] = r.subjectProbeError;
    j["verb_probe_error"] = r.verbProbeError;
    j["combined_probe_error"] = r.combinedProbeError;
    j["observed_sva_error"] = r.observedSvaError;
    j["gap"] = r.gap;
    return j;
}

} // namespace

std::string to_json(const H3Report& report) {
    return h3_json(report).dump(2);
}

H3Report h3_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        H3Report r;
        r.subjectProbeError = j.at("subject_probe_error").get<double>();
        r.verbProbeError = j.at("verb_probe_error").get<double>();
        r.combinedProbeError = j.at("combined_probe_error").get<double>();
        r.observedSvaError = j.at("observed_sva_error").get<double>();
        r.gap = j.at("gap").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("h3 report: ") + e.what());
    }
}

void write_h3_json(const H3Report& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_json(report) << '\n';
}

void write_h3_csv(std::span<const H3Report> reports, std::span<const std::string> labels,
                  const std::filesystem::path& path) {
    if (reports.size() != labels.size()) {
        throw ValidationError("write_h3_csv: one label per report required");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "run,subject_probe_error,verb_probe_error,combined_probe_error,observed_sva_error,gap\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        out << text::csv_field(labels[i]) << ',' << text::format_double(r.subjectProbeError) << ','
            << text::format_double(r.verbProbeError) << ',' << text::format_double(r.combinedProbeError) << ','
            << text::format_double(r.observedSvaError) << ',' << text::format_double(r.gap) << '\n';
    }
}

} // namespace svafreq::probe
