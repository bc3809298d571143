#include "famt/config_text.hpp"

#include <charconv>
#include <cmath>

#include "famt/errors.hpp"

namespace famt {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view value, const char* what) {
  value = trim(value);
  T v{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    throw ParameterError(std::string(key) + ": expected " + what + ", got '" + std::string(value) +
                         "'");
  }
  return v;
}

}  // namespace

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  return parse_number<std::uint64_t>(key, value, "a non-negative integer");
}

std::int64_t parse_int(std::string_view key, std::string_view value) {
  return parse_number<std::int64_t>(key, value, "an integer");
}

double parse_real(std::string_view key, std::string_view value) {
  const double v = parse_number<double>(key, value, "a number");
  if (!std::isfinite(v)) throw ParameterError(std::string(key) + ": must be finite");
  return v;
}

bool parse_flag(std::string_view key, std::string_view value) {
  value = trim(value);
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw ParameterError(std::string(key) + ": expected a boolean, got '" + std::string(value) + "'");
}

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty()) {
      throw ParameterError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

}  // namespace famt
