#pragma once

#include "svafreq/corpus.hpp"
#include "svafreq/scorer.hpp"
#include "svafreq/stimuli.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace svafreq::analysis {

enum class BinningKind : std::uint8_t { Log10Frequency, Log2Ratio, AttractorCount, ConfidenceThreshold };

std::string_view to_string(BinningKind k) noexcept;
BinningKind parse_binning_kind(std::string_view s);

/// Bucket layout for one stratification.
///
/// Log10Frequency: "unseen" for 0, "(0,e0)", "[e0,e1)", ..., ">=ek".
/// Log2Ratio:      "<=e0", "(e0,e1]", ... up to the bucket ending at 1, then
///                 "(1,e)", "[e,e')", ..., ">=ek", plus "undefined". Values <= 1
///                 use closed-right intervals and values > 1 closed-left ones, so
///                 r and 1/r land in mirrored buckets and 1 goes to the lower side.
/// AttractorCount: "[0,e0)", "[e0,e1)", ..., ">=ek", labelled by the integer
///                 when a bucket holds one value ("0", "1", "2", "3+").
struct Binning {
    BinningKind kind = BinningKind::Log10Frequency;
    std::vector<double> edges;

    /// Throws ValidationError unless edges are finite, positive and strictly increasing.
    void validate() const;

    std::vector<std::string> labels() const;

    /// Bucket index for a key; `undefined` selects the undefined bucket
    /// (ratio binnings only).
    std::size_t bucket(double key) const;
    std::size_t undefined_bucket() const;

    static Binning frequency_decades();  // 1, 10, ..., 1e5
    static Binning ratio_default();      // 1/16, 1/4, 1, 4, 16
    static Binning attractor_default();  // 1, 2, 3

    bool operator==(const Binning&) const = default;
};

struct ReportRow {
    std::string bucket;
    std::size_t count = 0;
    std::size_t errors = 0;
    std::optional<double> errorRate;  // null when count is 0
    std::optional<std::pair<double, double>> ci95;

    bool operator==(const ReportRow&) const = default;
};

struct StratifiedReport {
    std::string name;
    std::optional<Binning> binning;
    std::vector<ReportRow> rows;
    std::size_t total = 0;

    bool operator==(const StratifiedReport&) const = default;
};

/// Wilson score interval at 95% (z = 1.959964).
std::pair<double, double> wilson_interval(std::size_t errors, std::size_t n);

/// Fraction of incorrect records. Throws ValidationError on empty input.
double error_rate(std::span<const scorer::EvaluationRecord> records);

/// Buckets "seen"/"unseen" by pairCount(subject form, target form).
/// Throws ValidationError when the pair is not registered in the index.
StratifiedReport stratify_seen_unseen(std::span<const scorer::EvaluationRecord> records,
                                      const corpus::FrequencyIndex& index);

/// Same split crossed with stimulus kind: seen/natural, unseen/natural, seen/nonce, unseen/nonce.
StratifiedReport stratify_seen_unseen_by_kind(std::span<const scorer::EvaluationRecord> records,
                                              const corpus::FrequencyIndex& index);

enum class FrequencyKey : std::uint8_t { Pair, VerbForm, SubjectForm };

std::string_view to_string(FrequencyKey k) noexcept;
FrequencyKey parse_frequency_key(std::string_view s);

/// Buckets records by the selected corpus count. Forms missing from the index
/// raise ValidationError.
StratifiedReport stratify_by_frequency(std::span<const scorer::EvaluationRecord> records,
                                       const corpus::FrequencyIndex& index, FrequencyKey key,
                                       const Binning& binning);

/// Buckets by count(target) / count(competing); 0/0 or unindexed forms go to "undefined".
StratifiedReport stratify_by_ratio(std::span<const scorer::EvaluationRecord> records,
                                   const corpus::FrequencyIndex& index, const Binning& binning);

/// Buckets by the attractor count of each record's context.
StratifiedReport stratify_by_attractors(std::span<const scorer::EvaluationRecord> records,
                                        std::span<const stimuli::SententialContext> contexts,
                                        const Binning& binning = Binning::attractor_default());

struct CurveSlice {
    std::size_t count = 0;
    std::size_t errors = 0;
    std::optional<double> errorRate;

    bool operator==(const CurveSlice&) const = default;
};

struct ConfidencePoint {
    double threshold = 0.5;
    CurveSlice above;  // confidence >= threshold
    CurveSlice below;  // confidence < threshold

    bool operator==(const ConfidencePoint&) const = default;
};

std::vector<ConfidencePoint> confidence_curves(std::span<const scorer::EvaluationRecord> records,
                                               std::span<const double> thresholds);

struct AbsRelRow {
    std::string verbForm;
    std::string lemma;
    std::uint64_t absoluteCount = 0;
    std::optional<double> ratio;  // count / competing count; null when both are 0

    bool operator==(const AbsRelRow&) const = default;
};

struct AbsRelTable {
    std::vector<AbsRelRow> rows;
    /// Spearman correlation of absoluteCount and ratio over rows with a ratio;
    /// null when undefined (fewer than two rows or a constant column).
    std::optional<double> spearman;
};

AbsRelTable abs_vs_relative_table(const corpus::FrequencyIndex& index, std::span<const Lexeme> verbs);

/// Spearman rank correlation with average ranks for ties; null when either
/// side is constant or there are fewer than two points.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

enum class ReportFormat : std::uint8_t { Csv, Json };

std::string report_to_json(const StratifiedReport& report);
StratifiedReport report_from_json(const std::string& text);
std::string report_to_csv(const StratifiedReport& report);

/// Throws IoError when the path cannot be written.
void emit_report(const StratifiedReport& report, ReportFormat format, const std::filesystem::path& path);

std::string confidence_to_csv(std::span<const ConfidencePoint> points);
std::string abs_rel_to_csv(const AbsRelTable& table);

struct PlotPoint {
    double x = 0.0;
    std::optional<double> y;
    std::size_t count = 0;
};

struct PlotSeries {
    std::string name;
    std::vector<PlotPoint> points;
};

/// Long-format CSV: series,x,y,count. Empty y for missing values.
void write_plot_data(std::span<const PlotSeries> series, const std::filesystem::path& path);

} // namespace svafreq::analysis
