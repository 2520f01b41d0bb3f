#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace svafreq {

enum class Number : std::uint8_t { Singular, Plural };

enum class PartOfSpeech : std::uint8_t { Noun, Verb };

/// Training-set frequency bucket a noun was sampled from.
enum class FrequencyBucket : std::uint8_t { E2toE3, E3toE4, E4toE5, E5Plus };

inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kUnknownToken = "[UNK]";

constexpr Number opposite(Number n) noexcept {
    return n == Number::Singular ? Number::Plural : Number::Singular;
}

std::string_view to_string(Number n) noexcept;
std::string_view to_string(PartOfSpeech p) noexcept;
std::string_view to_string(FrequencyBucket b) noexcept;

Number parse_number(std::string_view s);
PartOfSpeech parse_part_of_speech(std::string_view s);
FrequencyBucket parse_frequency_bucket(std::string_view s);

/// A noun or verb with both inflections. For verbs the singular form is the
/// third-person singular ("adds") and the plural form is the base ("add").
struct Lexeme {
    std::string lemma;
    std::string singular;
    std::string plural;
    PartOfSpeech pos = PartOfSpeech::Noun;
    bool transitive = false;
    std::optional<FrequencyBucket> bucket;

    const std::string& form(Number n) const noexcept { return n == Number::Singular ? singular : plural; }

    bool operator==(const Lexeme&) const = default;
};

} // namespace svafreq
