// SPDX-License-Identifier: Apache-2.0
#include "skullnet/text.hpp"

#include <charconv>
#include <cmath>
#include <limits>

#include "skullnet/error.hpp"

namespace skullnet {

namespace {

template <typename T>
std::string format_shortest(T v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_strict(std::string_view s, std::string_view what) {
  if (s == "inf") return std::numeric_limits<T>::infinity();
  if (s == "-inf") return -std::numeric_limits<T>::infinity();
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ValidationError(std::string(what) + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double v) { return format_shortest(v); }
std::string format_float(float v) { return format_shortest(v); }

double parse_double(std::string_view s, std::string_view what) {
  return parse_strict<double>(s, what);
}
float parse_float(std::string_view s, std::string_view what) {
  return parse_strict<float>(s, what);
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace skullnet
