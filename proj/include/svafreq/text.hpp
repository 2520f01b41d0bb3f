#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace svafreq::text {

std::string_view trim(std::string_view s) noexcept;
std::vector<std::string> split(std::string_view s, char sep);
/// Splits on runs of ASCII whitespace.
std::vector<std::string> split_ws(std::string_view s);

/// RFC 4180 quoting when the field needs it.
std::string csv_field(std::string_view s);
std::vector<std::string> parse_csv_line(std::string_view line);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

} // namespace svafreq::text
