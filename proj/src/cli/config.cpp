#include <cstdlib>
#include <set>

#include "engage/cli.hpp"
#include "engage/question_factory.hpp"
#include "engage/trainer.hpp"

namespace engage::cli {

namespace {

const std::set<std::string> kTopLevel{"schema_version", "seed",      "mode",  "workers",   "output_root", "paths",
                                      "gateways",       "train",     "mix",   "sweep",     "annotation",  "multiturn"};
const std::set<std::string> kPaths{"images", "general", "benchmark", "engagement", "baselines", "scenarios"};
const std::set<std::string> kRoles{"generator", "judge", "simulator", "model"};
const std::set<std::string> kGatewayKeys{"kind",       "script",     "endpoint",    "model", "credentials_env",
                                         "concurrency", "timeout_ms", "max_attempts", "backoff_ms"};
const std::set<std::string> kTrainKeys{"epochs", "batch_size", "learning_rate", "seed", "loss_scope", "adapter"};
const std::set<std::string> kMixKeys{"rho"};
const std::set<std::string> kSweepKeys{"ratios"};
const std::set<std::string> kAnnotationKeys{"annotators", "host", "port", "journal"};
const std::set<std::string> kMultiturnKeys{"subject_id"};

bool non_negative(const json& j) { return j.is_number_integer() && j.get<std::int64_t>() >= 0; }

[[noreturn]] void invalid(const std::string& field, const std::string& msg) {
  throw Error(ErrorKind::ConfigInvalid, field + ": " + msg);
}

void expect_object(const json& j, const std::string& field) {
  if (!j.is_object()) invalid(field, "expected an object");
}

void only_keys(const json& j, const std::set<std::string>& allowed, const std::string& prefix) {
  expect_object(j, prefix.empty() ? "config" : prefix);
  for (const auto& [k, _] : j.items()) {
    if (!allowed.count(k)) invalid(prefix.empty() ? k : prefix + "." + k, "unknown field");
  }
}

void expect(const json& j, const std::string& field, bool ok, const char* what) {
  if (!ok) invalid(field, std::string("expected ") + what + ", got " + j.dump());
}

json interpolate_tree(const json& j, const std::string& field, const EnvLookup& env) {
  if (j.is_string()) return interpolate(j.get<std::string>(), field, env);
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) out[k] = interpolate_tree(v, field.empty() ? k : field + "." + k, env);
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(interpolate_tree(j[i], field + "[" + std::to_string(i) + "]", env));
    return out;
  }
  return j;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownCommand:
    case ErrorKind::ConfigInvalid:
      return kUsage;
    case ErrorKind::BackendUnavailable:
    case ErrorKind::AuthFailure:
    case ErrorKind::UnscriptedRequest:
    case ErrorKind::MalformedGeneration:
    case ErrorKind::SelectionMismatch:
    case ErrorKind::NoValidCandidates:
    case ErrorKind::EmptyResponse:
    case ErrorKind::DegeneratePair:
    case ErrorKind::FailureRateExceeded:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::DecodeFailure:
    case ErrorKind::UnparseableWinner:
      return kRuntime;
    default:
      return kInvalidInput;
  }
}

const std::vector<std::string>& commands() {
  static const std::vector<std::string> list{"generate", "select", "annotate-serve", "imagine",
                                             "build-dataset", "mix", "train", "evaluate",
                                             "validate-judge", "multiturn", "sweep", "report"};
  return list;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

std::string interpolate(std::string_view text, const std::string& field, const EnvLookup& env) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '$') {
      out += text[i];
      continue;
    }
    if (i + 1 < text.size() && text[i + 1] == '$') {
      out += '$';
      ++i;
      continue;
    }
    if (i + 1 >= text.size() || text[i + 1] != '{') {
      out += '$';
      continue;
    }
    auto close = text.find('}', i + 2);
    if (close == std::string_view::npos) invalid(field, "unterminated ${ in value");
    std::string name(text.substr(i + 2, close - i - 2));
    if (name.empty()) invalid(field, "empty variable name");
    auto v = env(name);
    if (!v) invalid(field, "environment variable " + name + " is not set");
    out += *v;
    i = close;
  }
  return out;
}

Config Config::load(const std::filesystem::path& path, const EnvLookup& env) {
  json raw;
  try {
    raw = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ConfigInvalid, path.string() + ": " + e.what());
  }
  return from_json(raw, std::filesystem::absolute(path).parent_path(), env);
}

Config Config::from_json(const json& raw, std::filesystem::path base_dir, const EnvLookup& env) {
  Config c;
  c.raw = raw;
  c.base_dir = std::move(base_dir);
  c.resolved = interpolate_tree(raw, "", env);
  validate_config(c);
  return c;
}

const json* Config::find(const std::string& dotted) const {
  const json* node = &resolved;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    auto dot = dotted.find('.', start);
    auto key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return node;
}

std::optional<std::filesystem::path> Config::path(const std::string& dotted) const {
  const json* n = find(dotted);
  if (!n) return std::nullopt;
  return resolve(base_dir, n->get<std::string>());
}

void validate_config(const Config& cfg) {
  const json& j = cfg.resolved;
  only_keys(j, kTopLevel, "");
  if (j.contains("schema_version")) {
    expect(j["schema_version"], "schema_version", j["schema_version"] == kSchemaVersion, "schema version 1");
  }
  if (j.contains("seed")) expect(j["seed"], "seed", non_negative(j["seed"]), "a non-negative integer");
  if (j.contains("workers")) {
    expect(j["workers"], "workers", non_negative(j["workers"]) && j["workers"].get<std::size_t>() > 0,
           "a positive integer");
  }
  if (j.contains("mode")) {
    expect(j["mode"], "mode", j["mode"].is_string(), "a string");
    try {
      questions::parse_mode(j["mode"].get<std::string>());
    } catch (const Error& e) {
      invalid("mode", e.detail());
    }
  }
  if (j.contains("output_root")) expect(j["output_root"], "output_root", j["output_root"].is_string(), "a string");
  if (j.contains("paths")) {
    only_keys(j["paths"], kPaths, "paths");
    for (const auto& [k, v] : j["paths"].items()) {
      expect(v, "paths." + k, v.is_string(), "a string");
      auto p = resolve(cfg.base_dir, v.get<std::string>());
      if (!std::filesystem::exists(p)) invalid("paths." + k, "no such file " + p.string());
    }
  }
  if (j.contains("gateways")) {
    only_keys(j["gateways"], kRoles, "gateways");
    for (const auto& [role, node] : j["gateways"].items()) backend_config(node, role, cfg.base_dir);
  }
  if (j.contains("train")) {
    only_keys(j["train"], kTrainKeys, "train");
    try {
      (void)j["train"].get<trainer::TrainConfig>();
    } catch (const Error& e) {
      invalid("train", e.detail());
    } catch (const std::exception& e) {
      invalid("train", e.what());
    }
  }
  if (j.contains("mix")) {
    only_keys(j["mix"], kMixKeys, "mix");
    if (j["mix"].contains("rho")) {
      const auto& r = j["mix"]["rho"];
      expect(r, "mix.rho", r.is_number() && r.get<double>() >= 0.0 && r.get<double>() <= 1.0, "a number in [0, 1]");
    }
  }
  if (j.contains("sweep")) {
    only_keys(j["sweep"], kSweepKeys, "sweep");
    if (j["sweep"].contains("ratios")) {
      const auto& r = j["sweep"]["ratios"];
      bool ok = r.is_array() && !r.empty();
      if (ok)
        for (const auto& x : r) ok = ok && x.is_number();
      expect(r, "sweep.ratios", ok, "a non-empty array of numbers");
    }
  }
  if (j.contains("annotation")) {
    only_keys(j["annotation"], kAnnotationKeys, "annotation");
    const auto& a = j["annotation"];
    if (a.contains("annotators")) {
      bool ok = a["annotators"].is_array();
      if (ok)
        for (const auto& x : a["annotators"]) ok = ok && x.is_string();
      expect(a["annotators"], "annotation.annotators", ok, "an array of strings");
    }
    if (a.contains("port")) {
      expect(a["port"], "annotation.port", non_negative(a["port"]) && a["port"].get<int>() < 65536,
             "a port number");
    }
    if (a.contains("host")) expect(a["host"], "annotation.host", a["host"].is_string(), "a string");
    if (a.contains("journal")) expect(a["journal"], "annotation.journal", a["journal"].is_string(), "a string");
  }
  if (j.contains("multiturn")) {
    only_keys(j["multiturn"], kMultiturnKeys, "multiturn");
    if (j["multiturn"].contains("subject_id")) {
      expect(j["multiturn"]["subject_id"], "multiturn.subject_id", j["multiturn"]["subject_id"].is_string(),
             "a string");
    }
  }
}

gateway::BackendConfig backend_config(const json& node, const std::string& role,
                                      const std::filesystem::path& base_dir) {
  const std::string prefix = "gateways." + role;
  only_keys(node, kGatewayKeys, prefix);
  gateway::BackendConfig c;
  const auto str = [&](const char* key) -> std::string {
    if (!node.contains(key)) return {};
    expect(node[key], prefix + "." + key, node[key].is_string(), "a string");
    return node[key].get<std::string>();
  };
  const auto count = [&](const char* key, std::size_t fallback) -> std::size_t {
    if (!node.contains(key)) return fallback;
    expect(node[key], prefix + "." + key, non_negative(node[key]), "a non-negative integer");
    return node[key].get<std::size_t>();
  };
  const auto kind = str("kind");
  if (kind == "scripted_mock" || kind.empty()) {
    c.kind = gateway::BackendKind::scripted_mock;
  } else if (kind == "remote_api") {
    c.kind = gateway::BackendKind::remote_api;
  } else {
    invalid(prefix + ".kind", "expected scripted_mock or remote_api, got " + kind);
  }
  auto script = str("script");
  if (!script.empty()) c.script_path = resolve(base_dir, script).string();
  c.endpoint = str("endpoint");
  c.model_name = str("model");
  c.credentials_env = str("credentials_env");
  c.concurrency_limit = count("concurrency", c.concurrency_limit);
  c.timeout = std::chrono::milliseconds(count("timeout_ms", c.timeout.count()));
  c.retry.max_attempts = count("max_attempts", c.retry.max_attempts);
  c.retry.backoff = std::chrono::milliseconds(count("backoff_ms", c.retry.backoff.count()));
  if (c.kind == gateway::BackendKind::scripted_mock) {
    if (c.script_path.empty()) invalid(prefix + ".script", "required for scripted_mock");
    if (!std::filesystem::exists(c.script_path)) invalid(prefix + ".script", "no such file " + c.script_path);
  }
  try {
    c.validate();
  } catch (const Error& e) {
    invalid(prefix, e.detail());
  }
  return c;
}

}  // namespace engage::cli
