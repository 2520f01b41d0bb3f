#include "svafreq/types.hpp"

#include "svafreq/error.hpp"

#include <string>

namespace svafreq {

std::string_view to_string(Number n) noexcept {
    return n == Number::Singular ? "singular" : "plural";
}

std::string_view to_string(PartOfSpeech p) noexcept {
    return p == PartOfSpeech::Noun ? "noun" : "verb";
}

std::string_view to_string(FrequencyBucket b) noexcept {
    switch (b) {
    case FrequencyBucket::E2toE3: return "1e2-1e3";
    case FrequencyBucket::E3toE4: return "1e3-1e4";
    case FrequencyBucket::E4toE5: return "1e4-1e5";
    case FrequencyBucket::E5Plus: return "1e5+";
    }
    return "?";
}

Number parse_number(std::string_view s) {
    if (s == "singular" || s == "sg") return Number::Singular;
    if (s == "plural" || s == "pl") return Number::Plural;
    throw ValidationError("unknown number '" + std::string(s) + "'");
}

PartOfSpeech parse_part_of_speech(std::string_view s) {
    if (s == "noun") return PartOfSpeech::Noun;
    if (s == "verb") return PartOfSpeech::Verb;
    throw ValidationError("unknown part of speech '" + std::string(s) + "'");
}

FrequencyBucket parse_frequency_bucket(std::string_view s) {
    if (s == "1e2-1e3") return FrequencyBucket::E2toE3;
    if (s == "1e3-1e4") return FrequencyBucket::E3toE4;
    if (s == "1e4-1e5") return FrequencyBucket::E4toE5;
    if (s == "1e5+") return FrequencyBucket::E5Plus;
    throw ValidationError("unknown frequency bucket '" + std::string(s) + "'");
}

} // namespace svafreq
