#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "engage/core.hpp"
#include "engage/error.hpp"

namespace engage {

using nlohmann::json;

void to_json(json& j, const ImageRecord& r);
void from_json(const json& j, ImageRecord& r);
void to_json(json& j, const CandidateQuestionSet& c);
void from_json(const json& j, CandidateQuestionSet& c);
void to_json(json& j, const ImageQuestionPair& p);
void from_json(const json& j, ImageQuestionPair& p);
void to_json(json& j, const ItemFailure& f);
void from_json(const json& j, ItemFailure& f);
void to_json(json& j, const EvaluationReport& r);
void from_json(const json& j, EvaluationReport& r);

/// Rejects records written by a different schema version. Records without a
/// version field are accepted so third-party corpora can be ingested.
void check_schema_version(const json& j);

/// Required string member; ValidationError naming the field otherwise.
std::string require_string(const json& j, const char* field);

namespace io {

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& content);
json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const json& value);

/// Parses each non-blank line; errors name the 1-based line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& lines);

template <typename T>
std::vector<T> read_records(const std::filesystem::path& path) {
  std::vector<T> out;
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<T>());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::ValidationError,
                  path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_records(const std::filesystem::path& path, const std::vector<T>& records) {
  std::vector<json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.emplace_back(r);
  write_jsonl(path, lines);
}

}  // namespace io
}  // namespace engage
