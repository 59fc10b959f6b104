// SPDX-License-Identifier: Apache-2.0
//
// Small text helpers shared by the CSV and report writers.
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace skullnet {

/// Shortest representation that parses back to the same value.
std::string format_double(double v);
std::string format_float(float v);

/// Strict parse of the whole string; throws ValidationError naming `what`.
double parse_double(std::string_view s, std::string_view what);
float parse_float(std::string_view s, std::string_view what);

/// Splits on commas (no quoting). A trailing '\r' is removed first.
std::vector<std::string_view> split_csv_line(std::string_view line);

}  // namespace skullnet
