#include "svafreq/synthetic.hpp"

#include "svafreq/error.hpp"
#include "svafreq/rng.hpp"

#include <fstream>
#include <set>

namespace svafreq::synthetic {

namespace {

constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "t", "v", "z", "br", "tr", "gl", "sn", "pl"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
constexpr const char* kCodas[] = {"k", "t", "p", "n", "m", "d", "g", "l", "r", "b"};

const std::vector<std::vector<std::string>> kIntros = {
    {"yesterday", ","}, {"today", ","}, {"in", "the", "morning", ","}, {"after", "that", ","}};
const std::vector<std::string> kPrepositions = {"of", "near", "with"};

std::string pick(Rng& rng, std::span<const char* const> items) {
    return items[static_cast<std::size_t>(rng.below(items.size()))];
}

std::string pseudo_word(Rng& rng) {
    std::string w = pick(rng, kOnsets) + pick(rng, kVowels);
    w += pick(rng, kOnsets) + pick(rng, kVowels) + pick(rng, kCodas);
    return w;
}

std::set<std::string> function_words() {
    std::set<std::string> out = {"the", "a", "and", "."};
    for (const auto& intro : kIntros) out.insert(intro.begin(), intro.end());
    out.insert(kPrepositions.begin(), kPrepositions.end());
    return out;
}

// A fresh stem whose bare and s-suffixed forms are unused.
std::string fresh_stem(Rng& rng, std::set<std::string>& used) {
    for (;;) {
        auto stem = pseudo_word(rng);
        if (used.contains(stem) || used.contains(stem + "s")) continue;
        used.insert(stem);
        used.insert(stem + "s");
        return stem;
    }
}

const Lexeme& choose(Rng& rng, const std::vector<Lexeme>& items) {
    return items[static_cast<std::size_t>(rng.below(items.size()))];
}

std::string noun_form(Rng& rng, const Lexeme& noun) {
    return rng.bernoulli(0.5) ? noun.singular : noun.plural;
}

} // namespace

void GrammarConfig::validate() const {
    if (nouns < 2 || verbs < 1 || vois < 1 || contexts < 1) {
        throw ValidationError("grammar config: need at least 2 nouns, 1 verb, 1 VOI and 1 context");
    }
    for (double p : {voiShare, introRate, attractorRate, coordinationRate}) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("grammar config: rates must lie in [0, 1]");
        }
    }
}

Grammar make_grammar(const GrammarConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, "grammar/words"));
    auto used = function_words();
    Grammar g;
    for (std::size_t i = 0; i < config.nouns; ++i) {
        auto stem = fresh_stem(rng, used);
        g.nouns.push_back(Lexeme{stem, stem, stem + "s", PartOfSpeech::Noun, false, std::nullopt});
    }
    for (std::size_t i = 0; i < config.verbs + config.vois; ++i) {
        auto stem = fresh_stem(rng, used);
        g.verbs.push_back(Lexeme{stem, stem + "s", stem, PartOfSpeech::Verb, true, std::nullopt});
        if (i >= config.verbs) g.vois.push_back(stem);
    }

    Rng crng(derive_seed(config.seed, "grammar/contexts"));
    for (std::size_t i = 0; i < config.contexts; ++i) {
        std::vector<std::string> t;
        if (i % 3 == 1) {
            const auto& intro = kIntros[(i / 3) % kIntros.size()];
            t.insert(t.end(), intro.begin(), intro.end());
        }
        t.insert(t.end(), {"the", "[SUBJECT]"});
        if (i % 2 == 1) {
            t.push_back(kPrepositions[(i / 2) % kPrepositions.size()]);
            t.push_back("the");
            t.push_back(noun_form(crng, choose(crng, g.nouns)));
        }
        t.push_back("[VERB]");
        if (crng.bernoulli(0.5)) {
            t.push_back("a");
            t.push_back(choose(crng, g.nouns).singular);
        } else {
            t.push_back("the");
            t.push_back(noun_form(crng, choose(crng, g.nouns)));
        }
        t.push_back(".");
        std::string line;
        for (const auto& tok : t) line += (line.empty() ? "" : " ") + tok;
        g.contexts.push_back(std::move(line));
    }
    return g;
}

corpus::Corpus sample_corpus(const Grammar& grammar, const GrammarConfig& config) {
    config.validate();
    std::vector<Lexeme> plain;
    std::vector<Lexeme> vois;
    const std::set<std::string> voiSet(grammar.vois.begin(), grammar.vois.end());
    for (const auto& v : grammar.verbs) {
        (voiSet.contains(v.lemma) ? vois : plain).push_back(v);
    }
    if (plain.empty() || vois.empty()) {
        throw ValidationError("sample_corpus: grammar needs both VOI and non-VOI verbs");
    }

    Rng rng(derive_seed(config.seed, "grammar/corpus"));
    auto verb = [&](Number n) -> const std::string& {
        const auto& v = rng.bernoulli(config.voiShare) ? choose(rng, vois) : choose(rng, plain);
        return v.form(n);
    };
    auto object = [&](std::vector<std::string>& t) {
        if (rng.bernoulli(0.5)) {
            t.push_back("a");
            t.push_back(choose(rng, grammar.nouns).singular);
        } else {
            t.push_back("the");
            t.push_back(noun_form(rng, choose(rng, grammar.nouns)));
        }
    };

    std::vector<std::vector<std::string>> out;
    out.reserve(config.sentences);
    for (std::size_t s = 0; s < config.sentences; ++s) {
        std::vector<std::string> t;
        if (rng.bernoulli(config.introRate)) {
            const auto& intro = kIntros[static_cast<std::size_t>(rng.below(kIntros.size()))];
            t.insert(t.end(), intro.begin(), intro.end());
        }
        const Number number = rng.bernoulli(0.5) ? Number::Singular : Number::Plural;
        t.push_back("the");
        t.push_back(choose(rng, grammar.nouns).form(number));
        if (rng.bernoulli(config.attractorRate)) {
            t.push_back(kPrepositions[static_cast<std::size_t>(rng.below(kPrepositions.size()))]);
            t.push_back("the");
            t.push_back(noun_form(rng, choose(rng, grammar.nouns)));
        }
        t.push_back(verb(number));
        object(t);
        if (rng.bernoulli(config.coordinationRate)) {
            t.push_back("and");
            t.push_back(verb(number));
            object(t);
        }
        t.push_back(".");
        out.push_back(std::move(t));
    }
    return corpus::Corpus::from_tokens(std::move(out));
}

std::vector<Lexeme> voi_lexemes(const Grammar& grammar) {
    std::vector<Lexeme> out;
    for (const auto& lemma : grammar.vois) {
        for (const auto& v : grammar.verbs) {
            if (v.lemma == lemma) out.push_back(v);
        }
    }
    return out;
}

std::vector<stimuli::SententialContext> parsed_contexts(const Grammar& grammar) {
    std::set<std::string> nounForms;
    for (const auto& n : grammar.nouns) {
        nounForms.insert(n.singular);
        nounForms.insert(n.plural);
    }
    std::vector<stimuli::SententialContext> out;
    for (std::size_t i = 0; i < grammar.contexts.size(); ++i) {
        out.push_back(stimuli::parse_context(grammar.contexts[i], static_cast<std::uint32_t>(i), nounForms));
    }
    return out;
}

void write_bundle(const Grammar& grammar, const corpus::Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    stimuli::write_lexicon_file(grammar.nouns, dir / "nouns.txt");
    stimuli::write_lexicon_file(grammar.verbs, dir / "verbs.txt");
    {
        std::ofstream out(dir / "contexts.txt", std::ios::binary | std::ios::trunc);
        for (const auto& c : grammar.contexts) out << c << '\n';
        if (!out) throw IoError("cannot write " + (dir / "contexts.txt").string());
    }
    {
        std::ofstream out(dir / "vois.txt", std::ios::binary | std::ios::trunc);
        for (const auto& v : grammar.vois) out << v << '\n';
        if (!out) throw IoError("cannot write " + (dir / "vois.txt").string());
    }
    corpus::write_corpus(corpus, dir / "corpus.txt");
}

} // namespace svafreq::synthetic
