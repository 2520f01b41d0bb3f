#pragma once

#include "svafreq/corpus.hpp"
#include "svafreq/stimuli.hpp"
#include "svafreq/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace svafreq::synthetic {

/// Knobs for the toy agreement grammar:
///
///   S   -> INTRO? NP_subj PP? V NP_obj (and V NP_obj)? .
///   PP  -> (of | near | with) the N
///
/// Subject number is uniform; PP nouns draw their number independently and so
/// act as attractors. Verbs agree with the subject. All words are pseudo-words
/// built from a fixed syllable inventory.
struct GrammarConfig {
    std::uint64_t seed = 7;
    std::size_t sentences = 200000;
    std::size_t nouns = 40;
    std::size_t verbs = 40;  // non-VOI verbs
    std::size_t vois = 8;
    double voiShare = 0.2;
    double introRate = 0.3;
    double attractorRate = 0.4;
    double coordinationRate = 0.05;
    std::size_t contexts = 12;

    void validate() const;
};

struct Grammar {
    std::vector<Lexeme> nouns;
    std::vector<Lexeme> verbs;  // non-VOI verbs followed by the VOIs
    std::vector<std::string> vois;  // VOI lemmas
    std::vector<std::string> contexts;  // evaluation templates with [SUBJECT]/[VERB]
};

/// Word inventory and evaluation contexts. Pure function of the config.
Grammar make_grammar(const GrammarConfig& config);

/// Samples `config.sentences` sentences from the grammar.
corpus::Corpus sample_corpus(const Grammar& grammar, const GrammarConfig& config);

std::vector<Lexeme> voi_lexemes(const Grammar& grammar);
std::vector<stimuli::SententialContext> parsed_contexts(const Grammar& grammar);

/// Writes nouns.txt, verbs.txt, contexts.txt, vois.txt and corpus.txt into `dir`.
void write_bundle(const Grammar& grammar, const corpus::Corpus& corpus, const std::filesystem::path& dir);

} // namespace svafreq::synthetic
