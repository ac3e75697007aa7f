#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace codesign {

/// Shortest decimal text that round-trips to the same double
/// ("nan", "inf", "-inf" for non-finite values).
std::string format_real(double value);

std::string_view trim(std::string_view s);

std::vector<std::string_view> split_lines(std::string_view text);

/// Parses all of `s` (after trimming, optional leading '+') as a double.
/// Returns false when any character is left over.
bool parse_real(std::string_view s, double& out);

} // namespace codesign
