#include "engage/json_io.hpp"

#include <sstream>

namespace engage {

void check_schema_version(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::ValidationError, "record is not a JSON object");
  if (auto it = j.find("schema_version"); it != j.end()) {
    if (!it->is_number_integer() || it->get<int>() != kSchemaVersion) {
      throw Error(ErrorKind::ValidationError,
                  "unsupported schema_version " + it->dump() + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
    }
  }
}

std::string require_string(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || !it->is_string()) {
    throw Error(ErrorKind::ValidationError, std::string("missing string field '") + field + "'");
  }
  return it->get<std::string>();
}

void to_json(json& j, const ImageRecord& r) {
  j = json{{"id", r.id}, {"location", r.location}, {"source", r.source}};
}

void from_json(const json& j, ImageRecord& r) {
  r.id = require_string(j, "id");
  r.location = j.value("location", "");
  r.source = j.value("source", "");
}

void to_json(json& j, const CandidateQuestionSet& c) {
  json slots = json::object();
  for (const auto& [t, q] : c.candidates) {
    slots[std::string(code(t))] = q ? json(*q) : json(nullptr);
  }
  j = json{{"schema_version", kSchemaVersion}, {"image_id", c.image_id}, {"candidates", slots}};
}

void from_json(const json& j, CandidateQuestionSet& c) {
  check_schema_version(j);
  c.image_id = require_string(j, "image_id");
  c.candidates.clear();
  for (const auto& [key, value] : j.at("candidates").items()) {
    const auto t = parse_question_type(key);
    if (value.is_null()) {
      c.candidates[t] = std::nullopt;
    } else {
      c.candidates[t] = value.get<std::string>();
    }
  }
  c.validate();
}

void to_json(json& j, const ImageQuestionPair& p) {
  j = json{{"schema_version", kSchemaVersion},
           {"id", p.id},
           {"image_id", p.image_id},
           {"question", p.question},
           {"qtype", std::string(code(p.qtype))},
           {"provenance", std::string(to_string(p.provenance))},
           {"status", std::string(to_string(p.status))}};
}

void from_json(const json& j, ImageQuestionPair& p) {
  check_schema_version(j);
  p.id = require_string(j, "id");
  p.image_id = require_string(j, "image_id");
  p.question = require_string(j, "question");
  p.qtype = parse_question_type(require_string(j, "qtype"));
  p.provenance = parse_provenance(j.value("provenance", "model_generated"));
  p.status = parse_pair_status(j.value("status", "candidate"));
  p.validate();
}

void to_json(json& j, const ItemFailure& f) {
  j = json{{"item_id", f.item_id}, {"error", std::string(to_string(f.kind))}, {"message", f.message}};
}

void from_json(const json& j, ItemFailure& f) {
  f.item_id = require_string(j, "item_id");
  f.message = j.value("message", "");
  const auto kind = require_string(j, "error");
  f.kind = ErrorKind::ValidationError;
  for (int k = 0; k <= static_cast<int>(ErrorKind::ConfigInvalid); ++k) {
    if (to_string(static_cast<ErrorKind>(k)) == kind) f.kind = static_cast<ErrorKind>(k);
  }
}

void to_json(json& j, const EvaluationReport& r) {
  json per_type = json::object();
  for (const auto& [t, s] : r.per_type) {
    json entry{{"ar", s.ar}, {"total", s.total}};
    if (auto it = r.parse_failures.find(t); it != r.parse_failures.end()) {
      entry["parse_failures"] = it->second;
    }
    if (auto it = r.ar_over_parsed.find(t); it != r.ar_over_parsed.end()) {
      entry["ar_over_parsed"] = it->second;
    }
    per_type[std::string(code(t))] = entry;
  }
  json per_tier = json::object();
  for (const auto& [tier, v] : r.per_tier) per_tier[std::string(to_string(tier))] = v;
  j = json{{"schema_version", kSchemaVersion},
           {"model_id", r.model_id},
           {"per_type", per_type},
           {"per_tier", per_tier},
           {"aar", r.aar}};
}

void from_json(const json& j, EvaluationReport& r) {
  check_schema_version(j);
  r = EvaluationReport{};
  r.model_id = j.value("model_id", "");
  for (const auto& [key, entry] : j.at("per_type").items()) {
    const auto t = parse_question_type(key);
    r.per_type[t] = TypeScore{entry.at("ar").get<double>(), entry.at("total").get<std::size_t>()};
    if (entry.contains("parse_failures")) {
      r.parse_failures[t] = entry["parse_failures"].get<std::size_t>();
    }
    if (entry.contains("ar_over_parsed")) {
      r.ar_over_parsed[t] = entry["ar_over_parsed"].get<double>();
    }
  }
  for (const auto& [key, v] : j.at("per_tier").items()) {
    Tier tier = key == "I" ? Tier::I : key == "II" ? Tier::II : Tier::III;
    r.per_tier[tier] = v.get<double>();
  }
  r.aar = j.at("aar").get<double>();
}

namespace io {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << content;
  out.flush();
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

json read_json(const std::filesystem::path& path) {
  const auto content = read_text(path);
  try {
    return json::parse(content);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ValidationError, path.filename().string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& value) {
  write_text(path, value.dump(2) + "\n");
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::ValidationError,
                  path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& lines) {
  std::string content;
  for (const auto& l : lines) {
    content += l.dump();
    content.push_back('\n');
  }
  write_text(path, content);
}

}  // namespace io
}  // namespace engage
