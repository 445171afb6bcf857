#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace xgml {

/// Shortest round-trip decimal form of a double ("0.1", "nan", "inf").
std::string format_double(double value);

/// Parses an entire token as a double. Returns false unless the whole
/// token is consumed.
bool parse_double(std::string_view token, double& out);

bool parse_int(std::string_view token, long long& out);

std::string_view trim(std::string_view text);

/// Splits on every separator; adjacent separators yield empty fields.
std::vector<std::string_view> split(std::string_view text, char separator);

/// Splits a text blob into lines, accepting LF and CRLF endings and
/// dropping a trailing empty line.
std::vector<std::string_view> split_lines(std::string_view text);

}  // namespace xgml
