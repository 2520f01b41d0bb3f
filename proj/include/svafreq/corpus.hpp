#pragma once

#include "svafreq/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace svafreq::corpus {

struct TokenizerConfig {
    bool lowercase = true;
    /// Split ASCII punctuation into single-character tokens.
    bool splitPunctuation = true;

    bool operator==(const TokenizerConfig&) const = default;
};

/// Lowercases ASCII letters and splits on whitespace and punctuation
/// boundaries. Bytes >= 0x80 are treated as word characters.
std::vector<std::string> tokenize(std::string_view line, const TokenizerConfig& config = {});

/// True when `text` is well-formed UTF-8 (no overlongs, no surrogates).
bool is_valid_utf8(std::string_view text) noexcept;

struct Sentence {
    std::uint64_t id = 0;
    std::vector<std::string> tokens;

    bool operator==(const Sentence&) const = default;
};

/// Ordered sentences with dense ids 0..N-1.
class Corpus {
public:
    Corpus() = default;

    /// Builds a corpus from token lists, assigning ids in order.
    static Corpus from_tokens(std::vector<std::vector<std::string>> sentences);

    void add(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return sentences_.size(); }
    bool empty() const noexcept { return sentences_.empty(); }
    const Sentence& operator[](std::size_t i) const { return sentences_[i]; }
    const std::vector<Sentence>& sentences() const noexcept { return sentences_; }

    auto begin() const noexcept { return sentences_.begin(); }
    auto end() const noexcept { return sentences_.end(); }

    std::uint64_t token_count() const noexcept;

    bool operator==(const Corpus&) const = default;

private:
    std::vector<Sentence> sentences_;
};

/// Reads one sentence per line. Blank lines are skipped.
/// Throws IoError when unreadable and ParseError (with line number) on invalid UTF-8.
Corpus ingest(const std::filesystem::path& path, const TokenizerConfig& config = {});

/// Writes tokens space-joined, one sentence per line. ingest() of the output
/// with the default tokenizer reproduces the corpus.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Exact counts for registered lexicon forms and (noun form, verb form) pairs.
///
/// pair_count(s, v) is the number of sentences containing both s and v at
/// least once. The registered set is fixed at construction; counting and
/// merging never add forms.
class FrequencyIndex {
public:
    FrequencyIndex() = default;

    /// Registers every form of `lexicon`. Throws DuplicateFormError when two
    /// lexemes share a form.
    explicit FrequencyIndex(std::span<const Lexeme> lexicon);

    /// Adds the counts of one sentence.
    void add_sentence(std::span<const std::string> tokens);

    /// Adds `other` into this index. Both must have the same registration.
    void merge(const FrequencyIndex& other);

    /// nullopt means "not indexed", which is distinct from a zero count.
    std::optional<std::uint64_t> count_form(std::string_view form) const;
    std::optional<std::uint64_t> pair_count(std::string_view subjectForm, std::string_view verbForm) const;

    bool is_noun_form(std::string_view form) const;
    bool is_verb_form(std::string_view form) const;

    std::uint64_t total_tokens() const noexcept { return totalTokens_; }
    std::uint64_t sentence_count() const noexcept { return sentences_; }

    /// Registered forms in sorted order with their counts.
    std::vector<std::pair<std::string, std::uint64_t>> form_counts() const;
    /// Nonzero pair counts, sorted by (noun form, verb form).
    std::vector<std::pair<std::pair<std::string, std::string>, std::uint64_t>> nonzero_pairs() const;

    const std::vector<std::string>& noun_forms() const noexcept { return nounForms_; }
    const std::vector<std::string>& verb_forms() const noexcept { return verbForms_; }

    void save(const std::filesystem::path& path) const;
    static FrequencyIndex load(const std::filesystem::path& path);

    bool operator==(const FrequencyIndex& other) const;

private:
    void register_form(const std::string& form, PartOfSpeech pos);
    void finalize_registration();

    struct Slot {
        std::uint32_t form = 0;   // index into forms_
        std::int32_t noun = -1;   // index into nounForms_
        std::int32_t verb = -1;   // index into verbForms_
    };

    std::vector<std::string> forms_;  // sorted
    std::vector<std::uint64_t> counts_;
    std::vector<std::string> nounForms_;  // sorted
    std::vector<std::string> verbForms_;  // sorted
    std::vector<std::uint64_t> pairCounts_;  // nounForms_.size() x verbForms_.size()
    std::unordered_map<std::string, Slot> slots_;
    std::uint64_t totalTokens_ = 0;
    std::uint64_t sentences_ = 0;
};

/// Single deterministic pass; with threads > 1 the corpus is split into
/// contiguous shards whose indexes are merged in shard order.
FrequencyIndex build_frequency_index(const Corpus& corpus, std::span<const Lexeme> lexicon, unsigned threads = 1);

std::optional<std::uint64_t> count_form(const FrequencyIndex& index, std::string_view form);

/// count(target) / count(competing). +infinity when only the competing count
/// is zero; UndefinedRatioError when both are zero. Throws ValidationError
/// when either form is not indexed.
double inflection_ratio(const FrequencyIndex& index, const Lexeme& lexeme, Number target);

} // namespace svafreq::corpus
