#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace perlcf {

// Shortest decimal that round-trips to the same double.
std::string format_number(double v);

// Strict parse of a whole field; returns false on junk or trailing text.
bool parse_number(std::string_view s, double& out);
bool parse_integer(std::string_view s, long long& out);

std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');

}  // namespace perlcf
