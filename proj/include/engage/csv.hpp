#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace engage::csv {

/// Quotes a field when it holds a comma, quote or line break.
std::string escape(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);
/// Fixed six decimals.
std::string format_number(double v);
/// Quoted fields may span lines; a ValidationError names the offending row.
std::vector<std::vector<std::string>> parse(std::string_view text);

}  // namespace engage::csv
