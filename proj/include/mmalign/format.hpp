#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace mmalign {

// Locale-independent number formatting.
inline std::string format_fixed(double value, int precision = 9) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, precision);
  if (ec != std::errc{}) return "nan";
  std::string out(buf, end);
  if (out.size() > 1 && out[0] == '-' && out.find_first_not_of("-0.") == std::string::npos) {
    out.erase(0, 1);  // no negative zero
  }
  return out;
}

inline std::string format_shortest(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

inline double parse_double(const std::string& text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) throw std::invalid_argument("not a number: " + text);
  return value;
}

}  // namespace mmalign
