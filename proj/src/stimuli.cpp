#include "svafreq/stimuli.hpp"

#include "svafreq/corpus.hpp"
#include "svafreq/error.hpp"
#include "svafreq/hash.hpp"
#include "svafreq/rng.hpp"
#include "svafreq/text.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace svafreq::stimuli {

namespace {

std::ifstream open_input(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(std::string("cannot open ") + what + " " + path.string());
    }
    return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

bool is_single_token(std::string_view s) {
    return !s.empty() && s.find_first_of(" \t\r\n") == std::string_view::npos;
}

} // namespace

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lexicon

std::vector<Lexeme> load_lexicon_file(const std::filesystem::path& path) {
    auto in = open_input(path, "lexicon");
    const std::string src = path.string();
    std::vector<Lexeme> out;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const auto body = text::trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        const auto f = text::split(body, '|');
        if (f.size() < 4 || f.size() > 5) {
            throw ParseError(src, row, "expected lemma|singular|plural|pos|flags");
        }
        Lexeme lex;
        lex.lemma = std::string(text::trim(f[0]));
        lex.singular = std::string(text::trim(f[1]));
        lex.plural = std::string(text::trim(f[2]));
        try {
            lex.pos = parse_part_of_speech(text::trim(f[3]));
        } catch (const ValidationError& e) {
            throw ParseError(src, row, e.what());
        }
        if (lex.lemma.empty() || !is_single_token(lex.singular) || !is_single_token(lex.plural)) {
            throw ParseError(src, row, "lemma and both forms must be nonempty single tokens");
        }
        if (lex.singular == lex.plural) {
            throw ParseError(src, row, "singular and plural forms are identical");
        }
        if (f.size() == 5) {
            for (const auto& flag : text::split(f[4], ',')) {
                const auto fl = text::trim(flag);
                if (fl.empty()) continue;
                if (fl == "transitive") {
                    lex.transitive = true;
                } else if (fl.starts_with("bucket=")) {
                    try {
                        lex.bucket = parse_frequency_bucket(fl.substr(7));
                    } catch (const ValidationError& e) {
                        throw ParseError(src, row, e.what());
                    }
                } else {
                    throw ParseError(src, row, "unknown flag '" + std::string(fl) + "'");
                }
            }
        }
        out.push_back(std::move(lex));
    }
    return out;
}

void check_unique_forms(std::span<const Lexeme> lexemes) {
    std::unordered_set<std::string> seen;
    for (const auto& lex : lexemes) {
        for (const auto* form : {&lex.singular, &lex.plural}) {
            if (!seen.insert(*form).second) {
                throw DuplicateFormError(*form);
            }
        }
    }
}

Lexicon load_lexicon(const std::filesystem::path& nounFile, const std::filesystem::path& verbFile) {
    Lexicon lex{load_lexicon_file(nounFile), load_lexicon_file(verbFile)};
    for (const auto& n : lex.nouns) {
        if (n.pos != PartOfSpeech::Noun) {
            throw ValidationError(nounFile.string() + ": '" + n.lemma + "' is not a noun");
        }
    }
    for (const auto& v : lex.verbs) {
        if (v.pos != PartOfSpeech::Verb) {
            throw ValidationError(verbFile.string() + ": '" + v.lemma + "' is not a verb");
        }
    }
    std::vector<Lexeme> all = lex.nouns;
    all.insert(all.end(), lex.verbs.begin(), lex.verbs.end());
    check_unique_forms(all);
    return lex;
}

void write_lexicon_file(std::span<const Lexeme> lexemes, const std::filesystem::path& path) {
    auto out = open_output(path);
    out << "# lemma|singular|plural|pos|flags\n";
    for (const auto& lex : lexemes) {
        out << lex.lemma << '|' << lex.singular << '|' << lex.plural << '|' << to_string(lex.pos) << '|';
        std::string flags;
        if (lex.transitive) flags += "transitive";
        if (lex.bucket) {
            if (!flags.empty()) flags += ',';
            flags += "bucket=" + std::string(to_string(*lex.bucket));
        }
        out << flags << '\n';
    }
}

std::string_view to_string(LexemeReject r) noexcept {
    switch (r) {
    case LexemeReject::NotInVocab: return "NOT_IN_VOCAB";
    case LexemeReject::AmbiguousForm: return "AMBIGUOUS_FORM";
    case LexemeReject::Intransitive: return "INTRANSITIVE";
    case LexemeReject::Duplicate: return "DUPLICATE";
    }
    return "?";
}

std::optional<LexemeReject> validate_lexeme(const Lexeme& lex, const std::set<std::string>& scorerVocab,
                                            const std::set<std::string>& ambiguitySet) {
    if (lex.singular == lex.plural) {
        return LexemeReject::Duplicate;
    }
    if (!scorerVocab.contains(lex.singular) || !scorerVocab.contains(lex.plural)) {
        return LexemeReject::NotInVocab;
    }
    if (ambiguitySet.contains(lex.singular) || ambiguitySet.contains(lex.plural)) {
        return LexemeReject::AmbiguousForm;
    }
    if (lex.pos == PartOfSpeech::Verb && !lex.transitive) {
        return LexemeReject::Intransitive;
    }
    return std::nullopt;
}

std::set<std::string> load_word_set(const std::filesystem::path& path) {
    auto in = open_input(path, "word list");
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto body = text::trim(line);
        if (body.empty() || body.front() == '#') continue;
        out.emplace(body);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Contexts

std::vector<std::string> SententialContext::render(std::string_view subject, std::string_view verb) const {
    std::vector<std::string> out;
    out.reserve(length());
    out.insert(out.end(), before.begin(), before.end());
    out.emplace_back(subject);
    out.insert(out.end(), between.begin(), between.end());
    out.emplace_back(verb);
    out.insert(out.end(), after.begin(), after.end());
    return out;
}

std::string SententialContext::to_template() const {
    return join_tokens(render(kSubjectSlot, kVerbSlot));
}

SententialContext parse_context(std::string_view line, std::uint32_t id, const std::set<std::string>& nounForms) {
    SententialContext ctx;
    ctx.id = id;
    int subjects = 0;
    int verbs = 0;
    for (const auto& chunk : text::split_ws(line)) {
        if (chunk == kSubjectSlot) {
            if (verbs > 0) {
                throw ValidationError("context " + std::to_string(id) + ": [VERB] precedes [SUBJECT]");
            }
            ++subjects;
            continue;
        }
        if (chunk == kVerbSlot) {
            ++verbs;
            continue;
        }
        auto& target = subjects == 0 ? ctx.before : (verbs == 0 ? ctx.between : ctx.after);
        for (auto& tok : corpus::tokenize(chunk)) {
            target.push_back(std::move(tok));
        }
    }
    if (subjects != 1 || verbs != 1) {
        throw ValidationError("context " + std::to_string(id) + ": expected exactly one [SUBJECT] and one [VERB], found " +
                              std::to_string(subjects) + " and " + std::to_string(verbs));
    }
    ctx.attractorCount = static_cast<std::uint32_t>(
        std::count_if(ctx.between.begin(), ctx.between.end(), [&](const std::string& t) { return nounForms.contains(t); }));
    return ctx;
}

std::vector<SententialContext> load_contexts(const std::filesystem::path& path, const std::set<std::string>& nounForms) {
    auto in = open_input(path, "context file");
    std::vector<SententialContext> out;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        const auto body = text::trim(line);
        if (body.empty() || body.front() == '#') continue;
        try {
            auto ctx = parse_context(body, static_cast<std::uint32_t>(out.size()), nounForms);
            ctx.sourceId = path.filename().string() + ":" + std::to_string(lineNo);
            out.push_back(std::move(ctx));
        } catch (const ValidationError& e) {
            throw ParseError(path.string(), lineNo, e.what());
        }
    }
    return out;
}

std::string_view to_string(ContextReject r) noexcept {
    switch (r) {
    case ContextReject::NumberCue: return "NUMBER_CUE";
    case ContextReject::VerbHostile: return "VERB_HOSTILE";
    case ContextReject::NounHostile: return "NOUN_HOSTILE";
    case ContextReject::UngrammaticalFlagged: return "UNGRAMMATICAL_FLAGGED";
    case ContextReject::BadParseFlagged: return "BAD_PARSE_FLAGGED";
    case ContextReject::IntransitiveOriginal: return "INTRANSITIVE_ORIGINAL";
    }
    return "?";
}

ContextReject parse_context_reject(std::string_view code) {
    for (auto r : {ContextReject::NumberCue, ContextReject::VerbHostile, ContextReject::NounHostile,
                   ContextReject::UngrammaticalFlagged, ContextReject::BadParseFlagged,
                   ContextReject::IntransitiveOriginal}) {
        if (to_string(r) == code) return r;
    }
    throw ValidationError("unknown context rejection code '" + std::string(code) + "'");
}

ContextRules ContextRules::defaults() {
    ContextRules r;
    r.cueTokens = {
        // determiners, demonstratives and quantifiers with a fixed number
        "this", "these", "those", "each", "every", "many", "several", "both", "few", "another",
        "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        // auxiliaries and copulas inflected for number
        "is", "are", "was", "were", "has", "have", "does", "do", "am",
    };
    for (const char* rel : {"who", "which", "that"}) {
        for (const char* v : {"thinks", "think", "says", "say", "seems", "seem", "knows", "know", "likes", "like",
                              "wants", "want", "lives", "live", "works", "work"}) {
            r.cuePhrases.emplace(rel, v);
        }
    }
    return r;
}

std::map<std::uint32_t, std::vector<ContextReject>> load_manual_annotations(const std::filesystem::path& path) {
    auto in = open_input(path, "annotation file");
    std::map<std::uint32_t, std::vector<ContextReject>> out;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        auto body = text::trim(line);
        if (auto hash = body.find('#'); hash != std::string_view::npos) {
            body = text::trim(body.substr(0, hash));
        }
        if (body.empty()) continue;
        const auto f = text::split_ws(body);
        if (f.size() != 2) {
            throw ParseError(path.string(), lineNo, "expected '<context id> <CODE>'");
        }
        try {
            out[static_cast<std::uint32_t>(std::stoul(f[0]))].push_back(parse_context_reject(f[1]));
        } catch (const ValidationError& e) {
            throw ParseError(path.string(), lineNo, e.what());
        } catch (const std::exception&) {
            throw ParseError(path.string(), lineNo, "bad context id '" + f[0] + "'");
        }
    }
    return out;
}

std::optional<ContextReject> validate_context(const SententialContext& context, const ContextRules& rules) {
    std::vector<std::string> preVerb = context.before;
    preVerb.push_back(std::string(kSubjectSlot));
    preVerb.insert(preVerb.end(), context.between.begin(), context.between.end());
    for (std::size_t i = 0; i < preVerb.size(); ++i) {
        if (rules.cueTokens.contains(preVerb[i])) {
            return ContextReject::NumberCue;
        }
        if (i + 1 < preVerb.size() && rules.cuePhrases.contains({preVerb[i], preVerb[i + 1]})) {
            return ContextReject::NumberCue;
        }
    }
    if (!rules.subjectDeterminers.empty() &&
        (context.before.empty() || !rules.subjectDeterminers.contains(context.before.back()))) {
        return ContextReject::NumberCue;
    }
    if (auto it = rules.manual.find(context.id); it != rules.manual.end() && !it->second.empty()) {
        return it->second.front();
    }
    return std::nullopt;
}

std::optional<ContextReject> validate_context(std::string_view templateLine, std::uint32_t id,
                                              const ContextRules& rules) {
    return validate_context(parse_context(templateLine, id), rules);
}

// ---------------------------------------------------------------------------
// Stimuli

std::string_view to_string(StimulusKind k) noexcept {
    return k == StimulusKind::Nonce ? "nonce" : "natural";
}

Stimulus make_nonce_stimulus(std::uint64_t id, const SententialContext& context, const Lexeme& noun,
                             const Lexeme& verb, Number number) {
    Stimulus s;
    s.id = id;
    s.contextId = context.id;
    s.subject = noun;
    s.subjectNumber = number;
    s.verb = verb;
    s.targetForm = verb.form(number);
    s.competingForm = verb.form(opposite(number));
    s.maskedTokens = context.render(noun.form(number), kMaskToken);
    s.maskIndex = context.verb_index();
    s.subjectIndex = context.subject_index();
    s.kind = StimulusKind::Nonce;
    return s;
}

NonceStimuli::NonceStimuli(std::vector<Lexeme> nouns, std::vector<Lexeme> verbs, std::vector<SententialContext> contexts)
    : nouns_(std::move(nouns)), verbs_(std::move(verbs)), contexts_(std::move(contexts)) {}

std::uint64_t NonceStimuli::size() const noexcept {
    return 2ULL * nouns_.size() * verbs_.size() * contexts_.size();
}

Stimulus NonceStimuli::at(std::uint64_t ordinal) const {
    if (ordinal >= size()) {
        throw std::out_of_range("NonceStimuli::at");
    }
    std::uint64_t rest = ordinal;
    const auto number = (rest % 2 == 0) ? Number::Singular : Number::Plural;
    rest /= 2;
    const auto v = rest % verbs_.size();
    rest /= verbs_.size();
    const auto n = rest % nouns_.size();
    rest /= nouns_.size();
    const auto c = rest;
    return make_nonce_stimulus(ordinal, contexts_[c], nouns_[n], verbs_[v], number);
}

NonceStimuli generate_nonce(std::vector<Lexeme> nouns, std::vector<Lexeme> verbs,
                            std::vector<SententialContext> contexts) {
    return NonceStimuli(std::move(nouns), std::move(verbs), std::move(contexts));
}

NaturalLoadResult load_natural(const std::filesystem::path& manifest) {
    auto in = open_input(manifest, "manifest");
    std::stringstream whole;
    whole << in.rdbuf();
    const std::string bytes = whole.str();

    NaturalLoadResult result;
    result.provenance = sha256_hex(bytes);
    std::istringstream lines(bytes);
    std::string line;
    std::size_t row = 0;
    while (std::getline(lines, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        if (row == 1 && line.starts_with("tokens")) continue;
        auto reject = [&](std::string reason) { result.rejected.push_back({row, std::move(reason)}); };
        const auto f = text::split(line, '\t');
        if (f.size() != 5) {
            reject("expected 5 tab-separated columns, found " + std::to_string(f.size()));
            continue;
        }
        const auto tokens = text::split_ws(f[0]);
        std::size_t subjectIndex = 0;
        std::size_t verbIndex = 0;
        try {
            subjectIndex = std::stoul(f[1]);
            verbIndex = std::stoul(f[2]);
        } catch (const std::exception&) {
            reject("subject/verb index is not an integer");
            continue;
        }
        if (subjectIndex >= tokens.size() || verbIndex >= tokens.size() || subjectIndex == verbIndex) {
            reject("subject/verb index out of range");
            continue;
        }
        const std::string singular(text::trim(f[3]));
        const std::string plural(text::trim(f[4]));
        if (singular.empty() || plural.empty() || singular == plural) {
            reject("singular and plural forms must be distinct and nonempty");
            continue;
        }
        Number number;
        if (tokens[verbIndex] == singular) {
            number = Number::Singular;
        } else if (tokens[verbIndex] == plural) {
            number = Number::Plural;
        } else {
            reject("verb token '" + tokens[verbIndex] + "' matches neither '" + singular + "' nor '" + plural + "'");
            continue;
        }
        Stimulus s;
        s.id = result.stimuli.size();
        s.contextId = static_cast<std::uint32_t>(row);
        s.subject = Lexeme{tokens[subjectIndex], tokens[subjectIndex], "", PartOfSpeech::Noun, false, std::nullopt};
        s.subjectNumber = number;
        s.verb = Lexeme{plural, singular, plural, PartOfSpeech::Verb, true, std::nullopt};
        s.targetForm = s.verb.form(number);
        s.competingForm = s.verb.form(opposite(number));
        s.maskedTokens = tokens;
        s.maskedTokens[verbIndex] = std::string(kMaskToken);
        s.maskIndex = verbIndex;
        s.subjectIndex = subjectIndex;
        s.kind = StimulusKind::Natural;
        result.stimuli.push_back(std::move(s));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Audit

namespace {

template <class At>
AuditSheet sample_audit_impl(std::uint64_t population, std::size_t k, std::uint64_t seed, At at) {
    if (k > population) {
        throw ValidationError("sample_audit: k=" + std::to_string(k) + " exceeds population " +
                              std::to_string(population));
    }
    Rng sampler(derive_seed(seed, "audit/sample"));
    const auto picks = sampler.sample_indices(static_cast<std::size_t>(population), k);
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    Rng presenter(derive_seed(seed, "audit/order"));
    presenter.shuffle(order);

    AuditSheet sheet;
    for (std::size_t item = 0; item < k; ++item) {
        const Stimulus s = at(picks[order[item]]);
        AuditRow row;
        row.item = item + 1;
        row.sentence = join_tokens(s.maskedTokens);
        row.optionA = std::min(s.targetForm, s.competingForm);
        row.optionB = std::max(s.targetForm, s.competingForm);
        sheet.rows.push_back(std::move(row));
        sheet.key.push_back(AuditKey{item + 1, s.id, s.targetForm, s.subjectNumber});
    }
    return sheet;
}

} // namespace

AuditSheet sample_audit(const NonceStimuli& stimuli, std::size_t k, std::uint64_t seed) {
    return sample_audit_impl(stimuli.size(), k, seed, [&](std::size_t i) { return stimuli.at(i); });
}

AuditSheet sample_audit(std::span<const Stimulus> stimuli, std::size_t k, std::uint64_t seed) {
    return sample_audit_impl(stimuli.size(), k, seed, [&](std::size_t i) { return stimuli[i]; });
}

void write_audit(const AuditSheet& sheet, const std::filesystem::path& sheetCsv, const std::filesystem::path& keyCsv) {
    auto out = open_output(sheetCsv);
    out << "item,sentence,option_a,option_b\n";
    for (const auto& r : sheet.rows) {
        out << r.item << ',' << text::csv_field(r.sentence) << ',' << text::csv_field(r.optionA) << ','
            << text::csv_field(r.optionB) << '\n';
    }
    auto key = open_output(keyCsv);
    key << "item,stimulus_id,answer,subject_number\n";
    for (const auto& k : sheet.key) {
        key << k.item << ',' << k.stimulusId << ',' << text::csv_field(k.answer) << ',' << to_string(k.subjectNumber)
            << '\n';
    }
}

namespace {

template <class Range>
void write_stimuli_rows(const Range& stimuli, const std::filesystem::path& path) {
    auto out = open_output(path);
    out << "id\tcontext_id\tsubject\tsubject_number\tverb\ttarget\tcompeting\tmask_index\tmasked_sentence\n";
    for (const auto& s : stimuli) {
        out << s.id << '\t' << s.contextId << '\t' << s.subject_form() << '\t' << to_string(s.subjectNumber) << '\t'
            << s.verb.lemma << '\t' << s.targetForm << '\t' << s.competingForm << '\t' << s.maskIndex << '\t'
            << join_tokens(s.maskedTokens) << '\n';
    }
}

} // namespace

void write_stimuli_tsv(const NonceStimuli& stimuli, const std::filesystem::path& path) {
    write_stimuli_rows(stimuli, path);
}

void write_stimuli_tsv(std::span<const Stimulus> stimuli, const std::filesystem::path& path) {
    write_stimuli_rows(stimuli, path);
}

} // namespace svafreq::stimuli
