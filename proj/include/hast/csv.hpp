#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hast::csv {

/// Shortest representation that round-trips exactly; locale independent.
std::string format_double(double value);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

std::optional<double> parse_double(std::string_view field);
std::optional<long long> parse_int(std::string_view field);

}  // namespace hast::csv
