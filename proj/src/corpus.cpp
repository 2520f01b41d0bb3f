#include "svafreq/corpus.hpp"

#include "svafreq/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace svafreq::corpus {

namespace {

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_punct(unsigned char c) {
    return c < 0x80 && std::ispunct(c) != 0;
}

constexpr std::string_view kIndexMagic = "svafreq-index";
constexpr int kIndexVersion = 1;

} // namespace

std::vector<std::string> tokenize(std::string_view line, const TokenizerConfig& config) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    };
    for (char ch : line) {
        const auto c = static_cast<unsigned char>(ch);
        if (is_space(c)) {
            flush();
        } else if (config.splitPunctuation && is_punct(c)) {
            flush();
            tokens.emplace_back(1, ch);
        } else {
            current.push_back(config.lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        }
    }
    flush();
    return tokens;
}

bool is_valid_utf8(std::string_view text) noexcept {
    const auto* s = reinterpret_cast<const unsigned char*>(text.data());
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const unsigned char c = s[i];
        if (c < 0x80) {
            ++i;
            continue;
        }
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > n) {
            return false;
        }
        for (std::size_t k = 1; k < len; ++k) {
            if ((s[i + k] & 0xC0) != 0x80) {
                return false;
            }
            cp = (cp << 6) | (s[i + k] & 0x3F);
        }
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
            (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += len;
    }
    return true;
}

Corpus Corpus::from_tokens(std::vector<std::vector<std::string>> sentences) {
    Corpus c;
    c.sentences_.reserve(sentences.size());
    for (auto& tokens : sentences) {
        c.add(std::move(tokens));
    }
    return c;
}

void Corpus::add(std::vector<std::string> tokens) {
    sentences_.push_back(Sentence{sentences_.size(), std::move(tokens)});
}

std::uint64_t Corpus::token_count() const noexcept {
    std::uint64_t n = 0;
    for (const auto& s : sentences_) {
        n += s.tokens.size();
    }
    return n;
}

Corpus ingest(const std::filesystem::path& path, const TokenizerConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open corpus file " + path.string());
    }
    Corpus corpus;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (!is_valid_utf8(line)) {
            throw ParseError(path.string(), lineNo, "invalid UTF-8");
        }
        auto tokens = tokenize(line, config);
        if (!tokens.empty()) {
            corpus.add(std::move(tokens));
        }
    }
    if (in.bad()) {
        throw IoError("read error on " + path.string());
    }
    return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write corpus file " + path.string());
    }
    for (const auto& s : corpus) {
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            if (i) out << ' ';
            out << s.tokens[i];
        }
        out << '\n';
    }
    if (!out) {
        throw IoError("write error on " + path.string());
    }
}

// ---------------------------------------------------------------------------
// FrequencyIndex

FrequencyIndex::FrequencyIndex(std::span<const Lexeme> lexicon) {
    for (const auto& lex : lexicon) {
        if (lex.singular == lex.plural) {
            throw DuplicateFormError(lex.singular);
        }
        register_form(lex.singular, lex.pos);
        register_form(lex.plural, lex.pos);
    }
    finalize_registration();
}

void FrequencyIndex::register_form(const std::string& form, PartOfSpeech pos) {
    if (form.empty()) {
        throw ValidationError("empty lexicon form");
    }
    if (slots_.contains(form)) {
        throw DuplicateFormError(form);
    }
    Slot slot;
    if (pos == PartOfSpeech::Noun) {
        slot.noun = 0;
    } else {
        slot.verb = 0;
    }
    slots_.emplace(form, slot);
}

void FrequencyIndex::finalize_registration() {
    forms_.clear();
    nounForms_.clear();
    verbForms_.clear();
    for (const auto& [form, slot] : slots_) {
        forms_.push_back(form);
        (slot.noun >= 0 ? nounForms_ : verbForms_).push_back(form);
    }
    std::sort(forms_.begin(), forms_.end());
    std::sort(nounForms_.begin(), nounForms_.end());
    std::sort(verbForms_.begin(), verbForms_.end());
    for (std::uint32_t i = 0; i < forms_.size(); ++i) {
        slots_[forms_[i]].form = i;
    }
    for (std::size_t i = 0; i < nounForms_.size(); ++i) {
        slots_[nounForms_[i]].noun = static_cast<std::int32_t>(i);
    }
    for (std::size_t i = 0; i < verbForms_.size(); ++i) {
        slots_[verbForms_[i]].verb = static_cast<std::int32_t>(i);
    }
    counts_.assign(forms_.size(), 0);
    pairCounts_.assign(nounForms_.size() * verbForms_.size(), 0);
}

void FrequencyIndex::add_sentence(std::span<const std::string> tokens) {
    ++sentences_;
    totalTokens_ += tokens.size();
    // Distinct noun/verb slots seen in this sentence.
    std::vector<std::int32_t> nouns;
    std::vector<std::int32_t> verbs;
    for (const auto& tok : tokens) {
        auto it = slots_.find(tok);
        if (it == slots_.end()) {
            continue;
        }
        ++counts_[it->second.form];
        if (it->second.noun >= 0) {
            nouns.push_back(it->second.noun);
        } else {
            verbs.push_back(it->second.verb);
        }
    }
    if (nouns.empty() || verbs.empty()) {
        return;
    }
    std::sort(nouns.begin(), nouns.end());
    nouns.erase(std::unique(nouns.begin(), nouns.end()), nouns.end());
    std::sort(verbs.begin(), verbs.end());
    verbs.erase(std::unique(verbs.begin(), verbs.end()), verbs.end());
    for (auto n : nouns) {
        for (auto v : verbs) {
            ++pairCounts_[static_cast<std::size_t>(n) * verbForms_.size() + static_cast<std::size_t>(v)];
        }
    }
}

void FrequencyIndex::merge(const FrequencyIndex& other) {
    if (forms_ != other.forms_ || nounForms_ != other.nounForms_) {
        throw ValidationError("cannot merge frequency indexes with different registrations");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        counts_[i] += other.counts_[i];
    }
    for (std::size_t i = 0; i < pairCounts_.size(); ++i) {
        pairCounts_[i] += other.pairCounts_[i];
    }
    totalTokens_ += other.totalTokens_;
    sentences_ += other.sentences_;
}

std::optional<std::uint64_t> FrequencyIndex::count_form(std::string_view form) const {
    auto it = slots_.find(std::string(form));
    if (it == slots_.end()) {
        return std::nullopt;
    }
    return counts_[it->second.form];
}

std::optional<std::uint64_t> FrequencyIndex::pair_count(std::string_view subjectForm, std::string_view verbForm) const {
    auto s = slots_.find(std::string(subjectForm));
    auto v = slots_.find(std::string(verbForm));
    if (s == slots_.end() || v == slots_.end() || s->second.noun < 0 || v->second.verb < 0) {
        return std::nullopt;
    }
    return pairCounts_[static_cast<std::size_t>(s->second.noun) * verbForms_.size() +
                       static_cast<std::size_t>(v->second.verb)];
}

bool FrequencyIndex::is_noun_form(std::string_view form) const {
    auto it = slots_.find(std::string(form));
    return it != slots_.end() && it->second.noun >= 0;
}

bool FrequencyIndex::is_verb_form(std::string_view form) const {
    auto it = slots_.find(std::string(form));
    return it != slots_.end() && it->second.verb >= 0;
}

std::vector<std::pair<std::string, std::uint64_t>> FrequencyIndex::form_counts() const {
    std::vector<std::pair<std::string, std::uint64_t>> out;
    out.reserve(forms_.size());
    for (std::size_t i = 0; i < forms_.size(); ++i) {
        out.emplace_back(forms_[i], counts_[i]);
    }
    return out;
}

std::vector<std::pair<std::pair<std::string, std::string>, std::uint64_t>> FrequencyIndex::nonzero_pairs() const {
    std::vector<std::pair<std::pair<std::string, std::string>, std::uint64_t>> out;
    for (std::size_t n = 0; n < nounForms_.size(); ++n) {
        for (std::size_t v = 0; v < verbForms_.size(); ++v) {
            if (auto c = pairCounts_[n * verbForms_.size() + v]; c != 0) {
                out.push_back({{nounForms_[n], verbForms_[v]}, c});
            }
        }
    }
    return out;
}

bool FrequencyIndex::operator==(const FrequencyIndex& other) const {
    return forms_ == other.forms_ && nounForms_ == other.nounForms_ && counts_ == other.counts_ &&
           pairCounts_ == other.pairCounts_ && totalTokens_ == other.totalTokens_ &&
           sentences_ == other.sentences_;
}

// Sorted-text persistence:
//   svafreq-index<TAB>1
//   total_tokens<TAB>N
//   sentences<TAB>N
//   form<TAB>noun|verb<TAB>FORM<TAB>COUNT      (every registered form, sorted)
//   pair<TAB>NOUN<TAB>VERB<TAB>COUNT           (nonzero pairs only, sorted)
void FrequencyIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write index " + path.string());
    }
    out << kIndexMagic << '\t' << kIndexVersion << '\n';
    out << "total_tokens\t" << totalTokens_ << '\n';
    out << "sentences\t" << sentences_ << '\n';
    for (std::size_t i = 0; i < forms_.size(); ++i) {
        const auto& slot = slots_.at(forms_[i]);
        out << "form\t" << (slot.noun >= 0 ? "noun" : "verb") << '\t' << forms_[i] << '\t' << counts_[i] << '\n';
    }
    for (const auto& [key, count] : nonzero_pairs()) {
        out << "pair\t" << key.first << '\t' << key.second << '\t' << count << '\n';
    }
    if (!out) {
        throw IoError("write error on " + path.string());
    }
}

FrequencyIndex FrequencyIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open index " + path.string());
    }
    const std::string src = path.string();
    auto fields = [](const std::string& line) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string part;
        while (std::getline(ss, part, '\t')) {
            f.push_back(part);
        }
        return f;
    };
    auto parse_u64 = [&](const std::string& s, std::size_t lineNo) -> std::uint64_t {
        try {
            std::size_t pos = 0;
            auto v = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ParseError(src, lineNo, "expected an unsigned count, got '" + s + "'");
        }
    };

    std::string line;
    std::size_t lineNo = 0;
    if (!std::getline(in, line)) {
        throw ParseError(src, 1, "missing header");
    }
    ++lineNo;
    auto header = fields(line);
    if (header.size() != 2 || header[0] != kIndexMagic) {
        throw ParseError(src, lineNo, "not a frequency index");
    }
    if (header[1] != std::to_string(kIndexVersion)) {
        throw ParseError(src, lineNo, "unsupported index version " + header[1]);
    }

    FrequencyIndex index;
    std::vector<std::pair<std::string, std::uint64_t>> formCounts;
    std::vector<std::tuple<std::string, std::string, std::uint64_t, std::size_t>> pairs;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.empty()) continue;
        auto f = fields(line);
        if (f[0] == "total_tokens" && f.size() == 2) {
            index.totalTokens_ = parse_u64(f[1], lineNo);
        } else if (f[0] == "sentences" && f.size() == 2) {
            index.sentences_ = parse_u64(f[1], lineNo);
        } else if (f[0] == "form" && f.size() == 4) {
            index.register_form(f[2], parse_part_of_speech(f[1]));
            formCounts.emplace_back(f[2], parse_u64(f[3], lineNo));
        } else if (f[0] == "pair" && f.size() == 4) {
            pairs.emplace_back(f[1], f[2], parse_u64(f[3], lineNo), lineNo);
        } else {
            throw ParseError(src, lineNo, "unrecognised record");
        }
    }
    index.finalize_registration();
    for (const auto& [form, count] : formCounts) {
        index.counts_[index.slots_.at(form).form] = count;
    }
    for (const auto& [noun, verb, count, at] : pairs) {
        auto s = index.slots_.find(noun);
        auto v = index.slots_.find(verb);
        if (s == index.slots_.end() || v == index.slots_.end() || s->second.noun < 0 || v->second.verb < 0) {
            throw ParseError(src, at, "pair references an unregistered form");
        }
        index.pairCounts_[static_cast<std::size_t>(s->second.noun) * index.verbForms_.size() +
                          static_cast<std::size_t>(v->second.verb)] = count;
    }
    return index;
}

FrequencyIndex build_frequency_index(const Corpus& corpus, std::span<const Lexeme> lexicon, unsigned threads) {
    FrequencyIndex total(lexicon);
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(corpus.size() / 1024 + 1)));
    if (threads == 1) {
        for (const auto& s : corpus) {
            total.add_sentence(s.tokens);
        }
        return total;
    }
    std::vector<FrequencyIndex> shards(threads, total);
    std::vector<std::thread> workers;
    const std::size_t per = (corpus.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        workers.emplace_back([&, t] {
            const std::size_t lo = std::min(corpus.size(), t * per);
            const std::size_t hi = std::min(corpus.size(), lo + per);
            for (std::size_t i = lo; i < hi; ++i) {
                shards[t].add_sentence(corpus[i].tokens);
            }
        });
    }
    for (auto& w : workers) {
        w.join();
    }
    for (const auto& shard : shards) {
        total.merge(shard);
    }
    return total;
}

std::optional<std::uint64_t> count_form(const FrequencyIndex& index, std::string_view form) {
    return index.count_form(form);
}

double inflection_ratio(const FrequencyIndex& index, const Lexeme& lexeme, Number target) {
    const auto t = index.count_form(lexeme.form(target));
    const auto c = index.count_form(lexeme.form(opposite(target)));
    if (!t || !c) {
        throw ValidationError("inflection_ratio: lexeme '" + lexeme.lemma + "' is not indexed");
    }
    if (*c == 0) {
        if (*t == 0) {
            throw UndefinedRatioError("inflection_ratio: both forms of '" + lexeme.lemma + "' have zero count");
        }
        return std::numeric_limits<double>::infinity();
    }
    return static_cast<double>(*t) / static_cast<double>(*c);
}

} // namespace svafreq::corpus
