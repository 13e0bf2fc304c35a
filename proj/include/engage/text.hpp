#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace engage::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
/// Lowercases, collapses runs of whitespace and strips surrounding quotes.
std::string normalize(std::string_view s);
/// Trims and collapses internal whitespace without changing case.
std::string squash_whitespace(std::string_view s);

/// Replaces each `{Name}` with its value. Every key must occur exactly once in
/// the template and no other `{...}` placeholder may remain (ValidationError).
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Number of occurrences of `{name}` in the template.
std::size_t count_placeholder(std::string_view tmpl, std::string_view name);

/// Position of the first occurrence of `word` (case-insensitive) bounded by
/// non-alphanumeric characters, or npos.
std::size_t find_word(std::string_view haystack, std::string_view word);

}  // namespace engage::text
