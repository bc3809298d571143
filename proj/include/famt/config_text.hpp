#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace famt {

// Strict scalar parsers for key=value settings. `key` only feeds the error
// message (ParameterError).
std::uint64_t parse_uint(std::string_view key, std::string_view value);
std::int64_t parse_int(std::string_view key, std::string_view value);
double parse_real(std::string_view key, std::string_view value);
bool parse_flag(std::string_view key, std::string_view value);

// Shortest text that parses back to the same double.
std::string format_real(double v);

// "key = value" lines; '#' starts a comment, blank lines are skipped.
// Later keys override earlier ones.
std::map<std::string, std::string> parse_key_values(std::string_view text);

}  // namespace famt
