#pragma once

#include <string>
#include <string_view>

namespace qtrack::io {

/// Shortest decimal form (at most 17 significant digits) that parses back
/// to the identical double.
std::string format_double(double v);
/// Throws InvalidArgument on malformed text.
double parse_double(std::string_view text);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Trim ASCII whitespace from both ends.
std::string_view trim(std::string_view s);

}  // namespace qtrack::io
