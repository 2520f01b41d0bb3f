#pragma once

#include "svafreq/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace svafreq::stimuli {

// ---------------------------------------------------------------------------
// Lexicon

/// Parses one lexicon file (pipe-delimited, '#' comments):
///   lemma|singular|plural|pos|flags
/// flags is a comma-separated list of `transitive` and `bucket=<1e2-1e3|...>`.
std::vector<Lexeme> load_lexicon_file(const std::filesystem::path& path);

struct Lexicon {
    std::vector<Lexeme> nouns;
    std::vector<Lexeme> verbs;
};

/// Loads both lists and rejects any surface form shared by two lexemes.
Lexicon load_lexicon(const std::filesystem::path& nounFile, const std::filesystem::path& verbFile);

void write_lexicon_file(std::span<const Lexeme> lexemes, const std::filesystem::path& path);

/// Throws DuplicateFormError when two lexemes share a form.
void check_unique_forms(std::span<const Lexeme> lexemes);

enum class LexemeReject : std::uint8_t { NotInVocab, AmbiguousForm, Intransitive, Duplicate };

std::string_view to_string(LexemeReject r) noexcept;

/// nullopt = accepted. Checks, in order: identical inflections (Duplicate),
/// vocabulary membership, ambiguity list, transitivity (verbs only).
std::optional<LexemeReject> validate_lexeme(const Lexeme& lex, const std::set<std::string>& scorerVocab,
                                            const std::set<std::string>& ambiguitySet);

/// Reads a one-token-per-line word list ('#' comments allowed).
std::set<std::string> load_word_set(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sentential contexts

inline constexpr std::string_view kSubjectSlot = "[SUBJECT]";
inline constexpr std::string_view kVerbSlot = "[VERB]";

struct SententialContext {
    std::uint32_t id = 0;
    std::vector<std::string> before;
    std::vector<std::string> between;
    std::vector<std::string> after;
    /// Registered noun forms between the two slots.
    std::uint32_t attractorCount = 0;
    std::optional<std::string> sourceId;

    std::size_t subject_index() const noexcept { return before.size(); }
    std::size_t verb_index() const noexcept { return before.size() + 1 + between.size(); }
    std::size_t length() const noexcept { return before.size() + between.size() + after.size() + 2; }

    std::vector<std::string> render(std::string_view subject, std::string_view verb) const;

    /// The template with its literal slot markers, tokens space-joined.
    std::string to_template() const;

    bool operator==(const SententialContext&) const = default;
};

/// Parses a template line with literal [SUBJECT]/[VERB] markers. Throws
/// ValidationError unless there is exactly one of each with SUBJECT first.
/// `nounForms` drives attractorCount.
SententialContext parse_context(std::string_view line, std::uint32_t id, const std::set<std::string>& nounForms = {});

/// One template per line; ids are assigned 0.. in file order.
std::vector<SententialContext> load_contexts(const std::filesystem::path& path,
                                             const std::set<std::string>& nounForms = {});

enum class ContextReject : std::uint8_t {
    NumberCue,
    VerbHostile,
    NounHostile,
    UngrammaticalFlagged,
    BadParseFlagged,
    IntransitiveOriginal,
};

std::string_view to_string(ContextReject r) noexcept;
ContextReject parse_context_reject(std::string_view code);

struct ContextRules {
    /// Tokens that carry number when they occur before the verb slot.
    std::set<std::string> cueTokens;
    /// Two-token patterns such as ("who", "thinks").
    std::set<std::pair<std::string, std::string>> cuePhrases;
    /// When nonempty, the token directly before SUBJECT must be one of these.
    std::set<std::string> subjectDeterminers;
    /// Manual annotations, context id -> codes.
    std::map<std::uint32_t, std::vector<ContextReject>> manual;

    /// Plural/singular determiners, demonstratives, inflected auxiliaries and copulas.
    static ContextRules defaults();
};

/// Manual annotation file, one `<context id> <CODE>` pair per line.
std::map<std::uint32_t, std::vector<ContextReject>> load_manual_annotations(const std::filesystem::path& path);

/// nullopt = accepted. Automatic NUMBER_CUE checks cover the tokens before
/// the verb slot; manual annotations are applied afterwards.
std::optional<ContextReject> validate_context(const SententialContext& context, const ContextRules& rules);

/// Parses and validates in one step (structural errors are thrown).
std::optional<ContextReject> validate_context(std::string_view templateLine, std::uint32_t id,
                                              const ContextRules& rules);

// ---------------------------------------------------------------------------
// Stimuli

enum class StimulusKind : std::uint8_t { Nonce, Natural };

std::string_view to_string(StimulusKind k) noexcept;

struct Stimulus {
    std::uint64_t id = 0;
    std::uint32_t contextId = 0;
    Lexeme subject;
    Number subjectNumber = Number::Singular;
    Lexeme verb;
    std::string targetForm;
    std::string competingForm;
    std::vector<std::string> maskedTokens;
    std::size_t maskIndex = 0;
    std::size_t subjectIndex = 0;
    StimulusKind kind = StimulusKind::Nonce;

    const std::string& subject_form() const { return maskedTokens[subjectIndex]; }

    bool operator==(const Stimulus&) const = default;
};

/// Every (context, noun, verb, number) combination, context-major, then noun,
/// then verb, then number (singular first). Stimuli are produced on demand
/// from their ordinal, so the full set never needs to be materialised.
class NonceStimuli {
public:
    NonceStimuli(std::vector<Lexeme> nouns, std::vector<Lexeme> verbs, std::vector<SententialContext> contexts);

    std::uint64_t size() const noexcept;
    Stimulus at(std::uint64_t ordinal) const;

    const std::vector<Lexeme>& nouns() const noexcept { return nouns_; }
    const std::vector<Lexeme>& verbs() const noexcept { return verbs_; }
    const std::vector<SententialContext>& contexts() const noexcept { return contexts_; }

    class iterator {
    public:
        using iterator_category = std::input_iterator_tag;
        using value_type = Stimulus;
        using difference_type = std::ptrdiff_t;
        using reference = Stimulus;
        using pointer = void;

        iterator(const NonceStimuli* owner, std::uint64_t pos) : owner_(owner), pos_(pos) {}
        Stimulus operator*() const { return owner_->at(pos_); }
        iterator& operator++() {
            ++pos_;
            return *this;
        }
        bool operator==(const iterator& o) const { return pos_ == o.pos_; }

    private:
        const NonceStimuli* owner_;
        std::uint64_t pos_;
    };

    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, size()}; }

private:
    std::vector<Lexeme> nouns_;
    std::vector<Lexeme> verbs_;
    std::vector<SententialContext> contexts_;
};

NonceStimuli generate_nonce(std::vector<Lexeme> nouns, std::vector<Lexeme> verbs,
                            std::vector<SententialContext> contexts);

/// Builds one stimulus directly.
Stimulus make_nonce_stimulus(std::uint64_t id, const SententialContext& context, const Lexeme& noun,
                             const Lexeme& verb, Number number);

struct NaturalRejection {
    std::size_t row = 0;  // 1-based line number in the manifest
    std::string reason;
};

struct NaturalLoadResult {
    std::vector<Stimulus> stimuli;
    std::vector<NaturalRejection> rejected;
    std::string provenance;  // sha256 of the manifest bytes
};

/// TSV manifest: tokens (space-separated), subject index, verb index,
/// singular form, plural form. An optional header line starting with
/// "tokens" is skipped.
NaturalLoadResult load_natural(const std::filesystem::path& manifest);

// ---------------------------------------------------------------------------
// Human audit sheets

struct AuditRow {
    std::size_t item = 0;
    std::string sentence;  // rendered with exactly one [MASK]
    std::string optionA;   // candidates in alphabetical order
    std::string optionB;
};

struct AuditKey {
    std::size_t item = 0;
    std::uint64_t stimulusId = 0;
    std::string answer;
    Number subjectNumber = Number::Singular;
};

struct AuditSheet {
    std::vector<AuditRow> rows;
    std::vector<AuditKey> key;
};

/// Uniform sample of k stimuli without replacement, presented in seeded
/// random order. Throws ValidationError when k exceeds the population.
AuditSheet sample_audit(const NonceStimuli& stimuli, std::size_t k, std::uint64_t seed);
AuditSheet sample_audit(std::span<const Stimulus> stimuli, std::size_t k, std::uint64_t seed);

void write_audit(const AuditSheet& sheet, const std::filesystem::path& sheetCsv, const std::filesystem::path& keyCsv);

/// Stimulus TSV (one row per stimulus) used by the CLI.
void write_stimuli_tsv(const NonceStimuli& stimuli, const std::filesystem::path& path);
void write_stimuli_tsv(std::span<const Stimulus> stimuli, const std::filesystem::path& path);

std::string join_tokens(std::span<const std::string> tokens);

} // namespace svafreq::stimuli
