#include "svafreq/analysis.hpp"

#include "svafreq/error.hpp"
#include "svafreq/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace svafreq::analysis {

namespace {

constexpr const char* kReportSchema = "svafreq.report/1";

bool is_integer(double v) {
    return std::isfinite(v) && v == std::floor(v);
}

std::string num(double v) {
    return text::format_double(v);
}

// Bucket edges: whole numbers without an exponent.
std::string edge(double v) {
    if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
    return num(v);
}

StratifiedReport make_report(std::string name, std::optional<Binning> binning, const std::vector<std::string>& labels,
                             const std::vector<std::size_t>& counts, const std::vector<std::size_t>& errors) {
    StratifiedReport r;
    r.name = std::move(name);
    r.binning = std::move(binning);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ReportRow row;
        row.bucket = labels[i];
        row.count = counts[i];
        row.errors = errors[i];
        if (row.count > 0) {
            row.errorRate = static_cast<double>(row.errors) / static_cast<double>(row.count);
            row.ci95 = wilson_interval(row.errors, row.count);
        }
        r.total += row.count;
        r.rows.push_back(std::move(row));
    }
    return r;
}

// Accumulates records into the buckets chosen by `pick`.
template <class Pick>
StratifiedReport tally(std::string name, std::optional<Binning> binning, std::vector<std::string> labels,
                       std::span<const scorer::EvaluationRecord> records, Pick pick) {
    std::vector<std::size_t> counts(labels.size(), 0);
    std::vector<std::size_t> errors(labels.size(), 0);
    for (const auto& r : records) {
        const std::size_t b = pick(r);
        ++counts[b];
        errors[b] += r.correct ? 0 : 1;
    }
    return make_report(std::move(name), std::move(binning), labels, counts, errors);
}

std::uint64_t registered_pair(const corpus::FrequencyIndex& index, const scorer::EvaluationRecord& r) {
    const auto c = index.pair_count(r.subjectForm, r.targetForm);
    if (!c) {
        throw ValidationError("pair (" + r.subjectForm + ", " + r.targetForm + ") is not registered in the index");
    }
    return *c;
}

std::uint64_t registered_form(const corpus::FrequencyIndex& index, const std::string& form) {
    const auto c = index.count_form(form);
    if (!c) {
        throw ValidationError("form '" + form + "' is not registered in the index");
    }
    return *c;
}

} // namespace

std::string_view to_string(BinningKind k) noexcept {
    switch (k) {
    case BinningKind::Log10Frequency: return "log10-frequency";
    case BinningKind::Log2Ratio: return "log2-ratio";
    case BinningKind::AttractorCount: return "attractor-count";
    case BinningKind::ConfidenceThreshold: return "confidence-threshold";
    }
    return "?";
}

BinningKind parse_binning_kind(std::string_view s) {
    for (auto k : {BinningKind::Log10Frequency, BinningKind::Log2Ratio, BinningKind::AttractorCount,
                   BinningKind::ConfidenceThreshold}) {
        if (s == to_string(k)) return k;
    }
    throw ValidationError("unknown binning kind '" + std::string(s) + "'");
}

void Binning::validate() const {
    if (edges.empty()) {
        throw ValidationError("binning: no edges");
    }
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (!std::isfinite(edges[i]) || edges[i] < 0.0 || (kind != BinningKind::AttractorCount && edges[i] <= 0.0)) {
            throw ValidationError("binning: edge " + num(edges[i]) + " is not a positive finite value");
        }
        if (i > 0 && !(edges[i] > edges[i - 1])) {
            throw ValidationError("binning: edges must be strictly increasing");
        }
    }
}

std::vector<std::string> Binning::labels() const {
    validate();
    std::vector<std::string> out;
    const std::size_t k = edges.size();
    switch (kind) {
    case BinningKind::Log10Frequency:
        out.push_back("unseen");
        out.push_back("(0," + edge(edges[0]) + ")");
        for (std::size_t i = 1; i < k; ++i) out.push_back("[" + edge(edges[i - 1]) + "," + edge(edges[i]) + ")");
        out.push_back(">=" + edge(edges[k - 1]));
        break;
    case BinningKind::Log2Ratio:
        out.push_back((edges[0] <= 1.0 ? "<=" : "<") + edge(edges[0]));
        for (std::size_t i = 1; i < k; ++i) {
            const double lo = edges[i - 1];
            const double hi = edges[i];
            if (hi <= 1.0) {
                out.push_back("(" + edge(lo) + "," + edge(hi) + "]");
            } else if (lo > 1.0) {
                out.push_back("[" + edge(lo) + "," + edge(hi) + ")");
            } else {
                out.push_back("(" + edge(lo) + "," + edge(hi) + ")");
            }
        }
        out.push_back((edges[k - 1] >= 1.0 ? ">=" : ">") + edge(edges[k - 1]));
        out.push_back("undefined");
        break;
    case BinningKind::AttractorCount:
    case BinningKind::ConfidenceThreshold: {
        double lo = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double hi = edges[i];
            if (is_integer(lo) && hi - lo == 1.0) {
                out.push_back(edge(lo));
            } else {
                out.push_back("[" + edge(lo) + "," + edge(hi) + ")");
            }
            lo = hi;
        }
        out.push_back(is_integer(edges[k - 1]) ? edge(edges[k - 1]) + "+" : ">=" + edge(edges[k - 1]));
        break;
    }
    }
    return out;
}

std::size_t Binning::bucket(double key) const {
    auto count_le = [&](double v) {
        return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
    };
    auto count_lt = [&](double v) {
        return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
    };
    if (std::isnan(key)) {
        if (kind == BinningKind::Log2Ratio) return undefined_bucket();
        throw ValidationError("binning: NaN key");
    }
    switch (kind) {
    case BinningKind::Log10Frequency:
        if (key <= 0.0) return 0;
        return 1 + count_le(key);
    case BinningKind::Log2Ratio:
        return key <= 1.0 ? count_lt(key) : count_le(key);
    case BinningKind::AttractorCount:
    case BinningKind::ConfidenceThreshold:
        return count_le(key);
    }
    return 0;
}

std::size_t Binning::undefined_bucket() const {
    if (kind != BinningKind::Log2Ratio) {
        throw ValidationError("binning: only ratio binnings have an undefined bucket");
    }
    return edges.size() + 1;
}

Binning Binning::frequency_decades() {
    return Binning{BinningKind::Log10Frequency, {1, 10, 100, 1000, 10000, 100000}};
}

Binning Binning::ratio_default() {
    return Binning{BinningKind::Log2Ratio, {1.0 / 16, 1.0 / 4, 1, 4, 16}};
}

Binning Binning::attractor_default() {
    return Binning{BinningKind::AttractorCount, {1, 2, 3}};
}

std::pair<double, double> wilson_interval(std::size_t errors, std::size_t n) {
    if (n == 0) {
        throw ValidationError("wilson_interval: n = 0");
    }
    constexpr double z = 1.959964;
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(errors) / nn;
    const double denom = 1.0 + z * z / nn;
    const double center = (p + z * z / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

double error_rate(std::span<const scorer::EvaluationRecord> records) {
    if (records.empty()) {
        throw ValidationError("error_rate: no records");
    }
    const auto wrong = std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.correct; });
    return static_cast<double>(wrong) / static_cast<double>(records.size());
}

StratifiedReport stratify_seen_unseen(std::span<const scorer::EvaluationRecord> records,
                                      const corpus::FrequencyIndex& index) {
    return tally("seen-unseen", std::nullopt, {"seen", "unseen"}, records,
                 [&](const auto& r) -> std::size_t { return registered_pair(index, r) > 0 ? 0 : 1; });
}

StratifiedReport stratify_seen_unseen_by_kind(std::span<const scorer::EvaluationRecord> records,
                                              const corpus::FrequencyIndex& index) {
    return tally("seen-unseen-by-kind", std::nullopt, {"seen/natural", "unseen/natural", "seen/nonce", "unseen/nonce"},
                 records, [&](const auto& r) -> std::size_t {
                     const std::size_t base = r.kind == stimuli::StimulusKind::Natural ? 0 : 2;
                     return base + (registered_pair(index, r) > 0 ? 0 : 1);
                 });
}

std::string_view to_string(FrequencyKey k) noexcept {
    switch (k) {
    case FrequencyKey::Pair: return "pair";
    case FrequencyKey::VerbForm: return "verb-form";
    case FrequencyKey::SubjectForm: return "subject-form";
    }
    return "?";
}

FrequencyKey parse_frequency_key(std::string_view s) {
    for (auto k : {FrequencyKey::Pair, FrequencyKey::VerbForm, FrequencyKey::SubjectForm}) {
        if (s == to_string(k)) return k;
    }
    throw ValidationError("unknown frequency key '" + std::string(s) + "'");
}

StratifiedReport stratify_by_frequency(std::span<const scorer::EvaluationRecord> records,
                                       const corpus::FrequencyIndex& index, FrequencyKey key,
                                       const Binning& binning) {
    if (binning.kind != BinningKind::Log10Frequency) {
        throw ValidationError("stratify_by_frequency needs a log10-frequency binning");
    }
    return tally("frequency/" + std::string(to_string(key)), binning, binning.labels(), records,
                 [&](const auto& r) -> std::size_t {
                     std::uint64_t c = 0;
                     switch (key) {
                     case FrequencyKey::Pair: c = registered_pair(index, r); break;
                     case FrequencyKey::VerbForm: c = registered_form(index, r.targetForm); break;
                     case FrequencyKey::SubjectForm: c = registered_form(index, r.subjectForm); break;
                     }
                     return binning.bucket(static_cast<double>(c));
                 });
}

StratifiedReport stratify_by_ratio(std::span<const scorer::EvaluationRecord> records,
                                   const corpus::FrequencyIndex& index, const Binning& binning) {
    if (binning.kind != BinningKind::Log2Ratio) {
        throw ValidationError("stratify_by_ratio needs a log2-ratio binning");
    }
    return tally("ratio", binning, binning.labels(), records, [&](const auto& r) -> std::size_t {
        const auto t = index.count_form(r.targetForm);
        const auto c = index.count_form(r.competingForm);
        if (!t || !c || (*t == 0 && *c == 0)) return binning.undefined_bucket();
        const double ratio = *c == 0 ? INFINITY : static_cast<double>(*t) / static_cast<double>(*c);
        return binning.bucket(ratio);
    });
}

StratifiedReport stratify_by_attractors(std::span<const scorer::EvaluationRecord> records,
                                        std::span<const stimuli::SententialContext> contexts,
                                        const Binning& binning) {
    if (binning.kind != BinningKind::AttractorCount) {
        throw ValidationError("stratify_by_attractors needs an attractor-count binning");
    }
    std::map<std::uint32_t, std::uint32_t> attractors;
    for (const auto& c : contexts) attractors[c.id] = c.attractorCount;
    return tally("attractors", binning, binning.labels(), records, [&](const auto& r) -> std::size_t {
        auto it = attractors.find(r.contextId);
        if (it == attractors.end()) {
            throw ValidationError("record " + std::to_string(r.stimulusId) + " refers to unknown context " +
                                  std::to_string(r.contextId));
        }
        return binning.bucket(static_cast<double>(it->second));
    });
}

std::vector<ConfidencePoint> confidence_curves(std::span<const scorer::EvaluationRecord> records,
                                               std::span<const double> thresholds) {
    std::vector<ConfidencePoint> out;
    for (double t : thresholds) {
        if (std::isnan(t)) {
            throw ValidationError("confidence_curves: NaN threshold");
        }
        ConfidencePoint p;
        p.threshold = t;
        for (const auto& r : records) {
            auto& slice = r.confidence >= t ? p.above : p.below;
            ++slice.count;
            slice.errors += r.correct ? 0 : 1;
        }
        for (auto* s : {&p.above, &p.below}) {
            if (s->count > 0) s->errorRate = static_cast<double>(s->errors) / static_cast<double>(s->count);
        }
        out.push_back(p);
    }
    return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ValidationError("spearman: length mismatch");
    }
    if (x.size() < 2) return std::nullopt;
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

AbsRelTable abs_vs_relative_table(const corpus::FrequencyIndex& index, std::span<const Lexeme> verbs) {
    AbsRelTable t;
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& v : verbs) {
        for (Number n : {Number::Singular, Number::Plural}) {
            AbsRelRow row;
            row.verbForm = v.form(n);
            row.lemma = v.lemma;
            row.absoluteCount = registered_form(index, v.form(n));
            const auto competing = registered_form(index, v.form(opposite(n)));
            if (row.absoluteCount > 0 || competing > 0) {
                row.ratio = competing == 0 ? INFINITY
                                           : static_cast<double>(row.absoluteCount) / static_cast<double>(competing);
                xs.push_back(static_cast<double>(row.absoluteCount));
                ys.push_back(*row.ratio);
            }
            t.rows.push_back(std::move(row));
        }
    }
    t.spearman = spearman(xs, ys);
    return t;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::string opt_csv(const std::optional<double>& v) {
    return v ? num(*v) : std::string();
}

void write_text(const std::string& content, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << content;
    if (!out) {
        throw IoError("write error on " + path.string());
    }
}

} // namespace

std::string report_to_json(const StratifiedReport& report) {
    nlohmann::ordered_json j;
    j["schema"] = kReportSchema;
    j["name"] = report.name;
    if (report.binning) {
        j["binning"] = {{"kind", std::string(to_string(report.binning->kind))}, {"edges", report.binning->edges}};
    } else {
        j["binning"] = nullptr;
    }
    j["total"] = report.total;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : report.rows) {
        nlohmann::ordered_json row;
        row["bucket"] = r.bucket;
        row["count"] = r.count;
        row["errors"] = r.errors;
        row["error_rate"] = opt_json(r.errorRate);
        row["ci95"] = r.ci95 ? nlohmann::ordered_json::array({r.ci95->first, r.ci95->second})
                             : nlohmann::ordered_json(nullptr);
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    return j.dump(2) + "\n";
}

StratifiedReport report_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("schema").get<std::string>() != kReportSchema) {
            throw ValidationError("report: unsupported schema '" + j.at("schema").get<std::string>() + "'");
        }
        StratifiedReport r;
        r.name = j.at("name").get<std::string>();
        if (!j.at("binning").is_null()) {
            r.binning = Binning{parse_binning_kind(j["binning"].at("kind").get<std::string>()),
                                j["binning"].at("edges").get<std::vector<double>>()};
        }
        r.total = j.at("total").get<std::size_t>();
        for (const auto& row : j.at("rows")) {
            ReportRow out;
            out.bucket = row.at("bucket").get<std::string>();
            out.count = row.at("count").get<std::size_t>();
            out.errors = row.at("errors").get<std::size_t>();
            if (!row.at("error_rate").is_null()) out.errorRate = row["error_rate"].get<double>();
            if (!row.at("ci95").is_null()) out.ci95 = std::make_pair(row["ci95"][0].get<double>(), row["ci95"][1].get<double>());
            r.rows.push_back(std::move(out));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("report: ") + e.what());
    }
}

std::string report_to_csv(const StratifiedReport& report) {
    std::ostringstream out;
    out << "bucket,count,errors,error_rate,ci95_low,ci95_high\n";
    for (const auto& r : report.rows) {
        out << text::csv_field(r.bucket) << ',' << r.count << ',' << r.errors << ',' << opt_csv(r.errorRate) << ','
            << (r.ci95 ? num(r.ci95->first) : "") << ',' << (r.ci95 ? num(r.ci95->second) : "") << '\n';
    }
    return out.str();
}

void emit_report(const StratifiedReport& report, ReportFormat format, const std::filesystem::path& path) {
    write_text(format == ReportFormat::Json ? report_to_json(report) : report_to_csv(report), path);
}

std::string confidence_to_csv(std::span<const ConfidencePoint> points) {
    std::ostringstream out;
    out << "threshold,above_count,above_errors,above_error_rate,below_count,below_errors,below_error_rate\n";
    for (const auto& p : points) {
        out << num(p.threshold) << ',' << p.above.count << ',' << p.above.errors << ',' << opt_csv(p.above.errorRate)
            << ',' << p.below.count << ',' << p.below.errors << ',' << opt_csv(p.below.errorRate) << '\n';
    }
    return out.str();
}

std::string abs_rel_to_csv(const AbsRelTable& table) {
    std::ostringstream out;
    out << "verb_form,lemma,absolute_count,ratio\n";
    for (const auto& r : table.rows) {
        out << text::csv_field(r.verbForm) << ',' << text::csv_field(r.lemma) << ',' << r.absoluteCount << ','
            << opt_csv(r.ratio) << '\n';
    }
    out << "# spearman," << opt_csv(table.spearman) << '\n';
    return out.str();
}

void write_plot_data(std::span<const PlotSeries> series, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "series,x,y,count\n";
    for (const auto& s : series) {
        for (const auto& p : s.points) {
            out << text::csv_field(s.name) << ',' << num(p.x) << ',' << opt_csv(p.y) << ',' << p.count << '\n';
        }
    }
    write_text(out.str(), path);
}

} // namespace svafreq::analysis
