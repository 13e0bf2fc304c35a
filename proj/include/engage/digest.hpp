#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

namespace engage {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// SHA-256 over length-prefixed fields, so ("ab","c") and ("a","bc") differ.
std::string sha256_fields(std::initializer_list<std::string_view> fields);

std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::string_view data);

}  // namespace engage
