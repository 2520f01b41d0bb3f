#include "svafreq/scorer.hpp"

#include "svafreq/error.hpp"
#include "svafreq/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace svafreq::scorer {

void ScoreRequest::validate() const {
    if (maskIndex >= tokens.size() || tokens[maskIndex] != kMaskToken) {
        throw ValidationError("score request: mask index does not point at " + std::string(kMaskToken));
    }
    if (std::count(tokens.begin(), tokens.end(), std::string(kMaskToken)) != 1) {
        throw ValidationError("score request: expected exactly one mask token");
    }
    if (candidates.empty()) {
        throw ValidationError("score request: no candidates");
    }
    std::set<std::string> distinct(candidates.begin(), candidates.end());
    if (distinct.size() != candidates.size()) {
        throw ValidationError("score request: candidates must be distinct");
    }
    if (subjectIndex && *subjectIndex >= tokens.size()) {
        throw ValidationError("score request: subject index out of range");
    }
}

ScoreRequest make_request(const stimuli::Stimulus& stimulus) {
    return ScoreRequest{stimulus.maskedTokens, stimulus.maskIndex, {stimulus.targetForm, stimulus.competingForm},
                        stimulus.subjectIndex};
}

EvaluationRecord decide(const stimuli::Stimulus& stimulus, double scoreTarget, double scoreCompeting,
                        std::string scorerId) {
    EvaluationRecord r;
    r.stimulusId = stimulus.id;
    r.kind = stimulus.kind;
    r.contextId = stimulus.contextId;
    r.subjectForm = stimulus.subject_form();
    r.subjectNumber = stimulus.subjectNumber;
    r.verbLemma = stimulus.verb.lemma;
    r.targetForm = stimulus.targetForm;
    r.competingForm = stimulus.competingForm;
    r.scoreTarget = scoreTarget;
    r.scoreCompeting = scoreCompeting;
    r.tie = scoreTarget == scoreCompeting;
    r.correct = scoreTarget > scoreCompeting;
    if (r.tie) {
        r.confidence = 0.5;
    } else {
        // softmax over the two scores, evaluated for the larger one
        const double gap = std::abs(scoreTarget - scoreCompeting);
        r.confidence = 1.0 / (1.0 + std::exp(-gap));
    }
    r.scorerId = std::move(scorerId);
    return r;
}

EvaluationRecord predict(const Scorer& scorer, const stimuli::Stimulus& stimulus) {
    const auto scores = scorer.score(make_request(stimulus));
    return decide(stimulus, scores.at(0), scores.at(1), scorer.id());
}

std::vector<EvaluationRecord> evaluate(const Scorer& scorer, std::span<const stimuli::Stimulus> stimuli) {
    std::vector<EvaluationRecord> out;
    out.reserve(stimuli.size());
    for (const auto& s : stimuli) {
        out.push_back(predict(scorer, s));
    }
    return out;
}

namespace {

constexpr const char* kRecordHeader =
    "stimulus_id,kind,context_id,subject_form,subject_number,verb_lemma,target_form,competing_form,"
    "score_target,score_competing,correct,tie,confidence,scorer";

double parse_double(const std::string& s) {
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
    return std::stod(s);
}

} // namespace

void write_records_csv(std::span<const EvaluationRecord> records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << kRecordHeader << '\n';
    for (const auto& r : records) {
        out << r.stimulusId << ',' << to_string(r.kind) << ',' << r.contextId << ',' << text::csv_field(r.subjectForm)
            << ',' << to_string(r.subjectNumber) << ',' << text::csv_field(r.verbLemma) << ','
            << text::csv_field(r.targetForm) << ',' << text::csv_field(r.competingForm) << ','
            << text::format_double(r.scoreTarget) << ',' << text::format_double(r.scoreCompeting) << ','
            << (r.correct ? 1 : 0) << ',' << (r.tie ? 1 : 0) << ',' << text::format_double(r.confidence) << ','
            << text::csv_field(r.scorerId) << '\n';
    }
}

std::vector<EvaluationRecord> read_records_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != kRecordHeader) {
        throw ParseError(path.string(), 1, "unexpected record header");
    }
    std::vector<EvaluationRecord> out;
    std::size_t lineNo = 1;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.empty()) continue;
        const auto f = text::parse_csv_line(line);
        if (f.size() != 14) {
            throw ParseError(path.string(), lineNo, "expected 14 fields");
        }
        try {
            EvaluationRecord r;
            r.stimulusId = std::stoull(f[0]);
            r.kind = f[1] == "natural" ? stimuli::StimulusKind::Natural : stimuli::StimulusKind::Nonce;
            r.contextId = static_cast<std::uint32_t>(std::stoul(f[2]));
            r.subjectForm = f[3];
            r.subjectNumber = parse_number(f[4]);
            r.verbLemma = f[5];
            r.targetForm = f[6];
            r.competingForm = f[7];
            r.scoreTarget = parse_double(f[8]);
            r.scoreCompeting = parse_double(f[9]);
            r.correct = f[10] == "1";
            r.tie = f[11] == "1";
            r.confidence = parse_double(f[12]);
            r.scorerId = f[13];
            out.push_back(std::move(r));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(path.string(), lineNo, e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> smoothed_log_scores(std::span<const std::uint64_t> counts, double alpha) {
    double z = 0.0;
    for (auto c : counts) {
        z += static_cast<double>(c) + alpha;
    }
    std::vector<double> out;
    out.reserve(counts.size());
    for (auto c : counts) {
        out.push_back(std::log((static_cast<double>(c) + alpha) / z));
    }
    return out;
}

} // namespace

UnigramScorer::UnigramScorer(std::shared_ptr<const corpus::FrequencyIndex> index, double alpha)
    : index_(std::move(index)), alpha_(alpha) {
    if (!index_) throw ValidationError("unigram scorer needs an index");
    if (!(alpha_ > 0.0)) throw ValidationError("unigram scorer: alpha must be positive");
}

std::vector<double> UnigramScorer::score(const ScoreRequest& request) const {
    request.validate();
    std::vector<std::uint64_t> counts;
    for (const auto& c : request.candidates) {
        const auto n = index_->count_form(c);
        if (!n) {
            throw OutOfVocabularyError(c);
        }
        counts.push_back(*n);
    }
    return smoothed_log_scores(counts, alpha_);
}

PairScorer::PairScorer(std::shared_ptr<const corpus::FrequencyIndex> index, std::shared_ptr<const Scorer> backoff,
                       double alpha)
    : index_(std::move(index)), backoff_(std::move(backoff)), alpha_(alpha) {
    if (!index_ || !backoff_) throw ValidationError("pair scorer needs an index and a backoff scorer");
    if (!(alpha_ > 0.0)) throw ValidationError("pair scorer: alpha must be positive");
}

bool PairScorer::has_entry(const ScoreRequest& request) const {
    if (!request.subjectIndex) return false;
    const auto& subject = request.tokens[*request.subjectIndex];
    for (const auto& c : request.candidates) {
        if (auto n = index_->pair_count(subject, c); n && *n > 0) return true;
    }
    return false;
}

std::vector<double> PairScorer::score(const ScoreRequest& request) const {
    request.validate();
    for (const auto& c : request.candidates) {
        if (!index_->is_verb_form(c)) {
            throw OutOfVocabularyError(c);
        }
    }
    if (!has_entry(request)) {
        return backoff_->score(request);
    }
    const auto& subject = request.tokens[*request.subjectIndex];
    std::vector<std::uint64_t> counts;
    for (const auto& c : request.candidates) {
        counts.push_back(index_->pair_count(subject, c).value_or(0));
    }
    return smoothed_log_scores(counts, alpha_);
}

std::shared_ptr<Scorer> make_unigram_scorer(std::shared_ptr<const corpus::FrequencyIndex> index) {
    return std::make_shared<UnigramScorer>(std::move(index));
}

std::shared_ptr<Scorer> make_pair_scorer(std::shared_ptr<const corpus::FrequencyIndex> index,
                                         std::shared_ptr<const Scorer> backoff) {
    return std::make_shared<PairScorer>(std::move(index), std::move(backoff));
}

} // namespace svafreq::scorer
