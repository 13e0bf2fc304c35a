#include "engage/crl.hpp"

#include <cmath>

#include "engage/assets.hpp"
#include "engage/digest.hpp"
#include "engage/random.hpp"
#include "engage/text.hpp"

namespace engage::crl {

std::string_view surface(RewardToken t) { return t == RewardToken::good ? "good" : "bad"; }

RewardToken parse_reward_token(std::string_view s) {
  if (s == "good") return RewardToken::good;
  if (s == "bad") return RewardToken::bad;
  throw Error(ErrorKind::ValidationError, "unknown reward token '" + std::string(s) + "'");
}

std::string_view to_string(Origin o) { return o == Origin::engagement ? "engagement" : "general"; }

std::string_view to_string(InstanceFormat f) {
  switch (f) {
    case InstanceFormat::crl: return "crl";
    case InstanceFormat::sft: return "sft";
    case InstanceFormat::multi_turn: return "multi_turn";
  }
  return "crl";
}

namespace {

Origin parse_origin(std::string_view s) {
  if (s == "engagement") return Origin::engagement;
  if (s == "general") return Origin::general;
  throw Error(ErrorKind::ValidationError, "unknown origin '" + std::string(s) + "'");
}

InstanceFormat parse_format(std::string_view s) {
  for (auto f : {InstanceFormat::crl, InstanceFormat::sft, InstanceFormat::multi_turn}) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorKind::ValidationError, "unknown instance format '" + std::string(s) + "'");
}

std::optional<std::string> optional_image(const std::string& id) {
  return id.empty() ? std::nullopt : std::optional<std::string>(id);
}

}  // namespace

void TrainingInstance::validate() const {
  const auto where = id.empty() ? std::string("instance") : id;
  if (text::trim(question).empty()) throw Error(ErrorKind::ValidationError, where + ": empty question");
  if (text::trim(response).empty()) throw Error(ErrorKind::ValidationError, where + ": empty response");
  if (origin == Origin::general && condition) {
    throw Error(ErrorKind::ValidationError, where + ": general instance with a condition token");
  }
  if (origin == Origin::engagement && format == InstanceFormat::crl && !condition) {
    throw Error(ErrorKind::ValidationError, where + ": engagement instance without a condition token");
  }
  if (format != InstanceFormat::crl && condition) {
    throw Error(ErrorKind::ValidationError, where + ": condition token outside the crl format");
  }
  if ((format == InstanceFormat::multi_turn) != feedback.has_value()) {
    throw Error(ErrorKind::ValidationError, where + ": feedback belongs to multi_turn instances only");
  }
  if (format == InstanceFormat::multi_turn && !initial_response) {
    throw Error(ErrorKind::ValidationError, where + ": multi_turn instance lacks the first response");
  }
}

void to_json(json& j, const TrainingInstance& t) {
  j = json{{"id", t.id},
           {"pair_id", t.pair_id},
           {"condition", t.condition ? json(surface(*t.condition)) : json(nullptr)},
           {"question", t.question},
           {"response", t.response},
           {"image_id", t.image_id ? json(*t.image_id) : json(nullptr)},
           {"origin", to_string(t.origin)},
           {"format", to_string(t.format)}};
  if (t.feedback) j["feedback"] = *t.feedback;
  if (t.initial_response) j["initial_response"] = *t.initial_response;
}

void from_json(const json& j, TrainingInstance& t) {
  check_schema_version(j);
  t = TrainingInstance{};
  t.id = j.value("id", "");
  t.pair_id = j.value("pair_id", "");
  if (j.contains("condition") && !j.at("condition").is_null()) {
    t.condition = parse_reward_token(j.at("condition").get<std::string>());
  }
  t.question = require_string(j, "question");
  t.response = require_string(j, "response");
  if (j.contains("image_id") && !j.at("image_id").is_null()) t.image_id = j.at("image_id").get<std::string>();
  t.origin = parse_origin(j.value("origin", "general"));
  t.format = parse_format(j.value("format", "crl"));
  if (j.contains("feedback") && !j.at("feedback").is_null()) t.feedback = j.at("feedback").get<std::string>();
  if (j.contains("initial_response") && !j.at("initial_response").is_null()) {
    t.initial_response = j.at("initial_response").get<std::string>();
  }
  t.validate();
}

std::pair<TrainingInstance, TrainingInstance> to_crl_instances(const imagination::ContrastivePair& p) {
  p.validate();
  TrainingInstance good;
  good.id = p.pair_id + "#good";
  good.pair_id = p.pair_id;
  good.condition = RewardToken::good;
  good.question = p.question;
  good.response = p.r_d;
  good.image_id = optional_image(p.image_id);
  TrainingInstance bad = good;
  bad.id = p.pair_id + "#bad";
  bad.condition = RewardToken::bad;
  bad.response = p.r_u;
  return {std::move(good), std::move(bad)};
}

std::vector<TrainingInstance> to_crl_instances(const std::vector<imagination::ContrastivePair>& pairs) {
  std::vector<TrainingInstance> out;
  out.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    auto [g, b] = to_crl_instances(p);
    out.push_back(std::move(g));
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<TrainingInstance> read_general_source(const std::filesystem::path& path) {
  const auto lines = io::read_jsonl(path);
  std::vector<TrainingInstance> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& j = lines[i];
    try {
      check_schema_version(j);
      TrainingInstance t;
      t.id = j.contains("id") ? j.at("id").get<std::string>() : "general/" + std::to_string(i + 1);
      t.question = require_string(j, "question");
      t.response = require_string(j, "response");
      if (j.contains("image_id") && !j.at("image_id").is_null()) t.image_id = j.at("image_id").get<std::string>();
      t.origin = Origin::general;
      if (j.contains("condition") && !j.at("condition").is_null()) {
        throw Error(ErrorKind::ValidationError, "general records carry no condition token");
      }
      t.validate();
      out.push_back(std::move(t));
    } catch (const std::exception& e) {
      const auto* err = dynamic_cast<const Error*>(&e);
      throw Error(ErrorKind::ValidationError, path.filename().string() + " line " + std::to_string(i + 1) +
                                                  ": " + (err ? err->detail() : std::string(e.what())));
    }
  }
  return out;
}

void MixtureConfig::validate() const {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw Error(ErrorKind::ConfigInvalid, "rho must lie in [0, 1], got " + std::to_string(rho));
  }
}

std::size_t engagement_quota(double rho, std::size_t n) {
  // A relative nudge absorbs representation error, e.g. 0.6 * 50000.
  const double exact = rho * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::floor(exact * (1.0 + 1e-12))));
}

std::string digest_instances(const std::vector<TrainingInstance>& instances) {
  std::string buf;
  for (const auto& t : instances) buf += json(t).dump() + "\n";
  return sha256_hex(buf);
}

MixResult mix(const std::vector<TrainingInstance>& engagement, const std::vector<TrainingInstance>& general,
              const MixtureConfig& cfg) {
  cfg.validate();
  if (cfg.rho > 0.0 && engagement.empty()) {
    throw Error(ErrorKind::SourceEmpty, "engagement source is empty but rho is " + std::to_string(cfg.rho));
  }
  for (const auto& t : engagement) {
    if (t.origin != Origin::engagement) throw Error(ErrorKind::ValidationError, t.id + ": not engagement data");
  }
  for (const auto& t : general) {
    if (t.origin != Origin::general) throw Error(ErrorKind::ValidationError, t.id + ": not general data");
  }

  SeededRng rng(cfg.seed);
  const auto quota = engagement_quota(cfg.rho, engagement.size());
  // Partial Fisher-Yates: the first `quota` slots are a uniform sample.
  std::vector<std::size_t> idx(engagement.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < quota; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }

  MixResult res;
  res.instances.reserve(quota + general.size());
  for (std::size_t i = 0; i < quota; ++i) res.instances.push_back(engagement[idx[i]]);
  res.instances.insert(res.instances.end(), general.begin(), general.end());
  seeded_shuffle(res.instances, rng);

  res.manifest = json{{"schema_version", kSchemaVersion},
                      {"rho", cfg.rho},
                      {"seed", cfg.seed},
                      {"counts",
                       {{"engagement_available", engagement.size()},
                        {"engagement_selected", quota},
                        {"general", general.size()},
                        {"total", res.instances.size()}}},
                      {"digests",
                       {{"engagement", digest_instances(engagement)},
                        {"general", digest_instances(general)},
                        {"output", digest_instances(res.instances)}}}};
  return res;
}

MixResult mix_files(const MixtureConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  std::vector<TrainingInstance> engagement;
  if (!cfg.engagement_source.empty()) engagement = io::read_records<TrainingInstance>(cfg.engagement_source);
  if (cfg.general_source.empty()) throw Error(ErrorKind::ConfigInvalid, "general_source is required");
  const auto general = read_general_source(cfg.general_source);

  auto res = mix(engagement, general, cfg);
  res.manifest["sources"] = {
      {"engagement", cfg.engagement_source.empty() ? json(nullptr) : json(cfg.engagement_source.filename().string())},
      {"general", cfg.general_source.filename().string()}};
  if (!cfg.engagement_source.empty()) {
    res.manifest["digests"]["engagement_file"] = sha256_file(cfg.engagement_source);
  }
  res.manifest["digests"]["general_file"] = sha256_file(cfg.general_source);
  io::write_records(out, res.instances);
  io::write_json(out.parent_path() / "manifest.json", res.manifest);
  return res;
}

FeedbackBank default_feedback_bank() {
  FeedbackBank bank;
  for (auto t : kAllQuestionTypes) bank[t] = assets::get("feedback_" + text::to_lower(code(t)));
  return bank;
}

std::vector<TrainingInstance> to_sft_only(const std::vector<imagination::ContrastivePair>& pairs) {
  std::vector<TrainingInstance> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    p.validate();
    TrainingInstance t;
    t.id = p.pair_id + "#sft";
    t.pair_id = p.pair_id;
    t.question = p.question;
    t.response = p.r_d;
    t.image_id = optional_image(p.image_id);
    t.format = InstanceFormat::sft;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<TrainingInstance> to_multi_turn(const std::vector<imagination::ContrastivePair>& pairs,
                                            const FeedbackBank& bank) {
  for (const auto& p : pairs) {
    auto it = bank.find(p.qtype);
    if (it == bank.end() || text::trim(it->second).empty()) {
      throw Error(ErrorKind::MissingFeedback, "no feedback text for " + std::string(code(p.qtype)));
    }
  }
  std::vector<TrainingInstance> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    p.validate();
    TrainingInstance t;
    t.id = p.pair_id + "#multi_turn";
    t.pair_id = p.pair_id;
    t.question = p.question;
    t.initial_response = p.r_u;
    t.feedback = bank.at(p.qtype);
    t.response = p.r_d;
    t.image_id = optional_image(p.image_id);
    t.format = InstanceFormat::multi_turn;
    out.push_back(std::move(t));
  }
  return out;
}

void to_json(json& j, const DpoRecord& r) {
  j = json{{"pair_id", r.pair_id},
           {"question", r.question},
           {"image_id", r.image_id},
           {"chosen", r.chosen},
           {"rejected", r.rejected}};
}

void from_json(const json& j, DpoRecord& r) {
  check_schema_version(j);
  r.pair_id = require_string(j, "pair_id");
  r.question = require_string(j, "question");
  r.image_id = j.value("image_id", "");
  r.chosen = require_string(j, "chosen");
  r.rejected = require_string(j, "rejected");
}

std::vector<DpoRecord> to_dpo_export(const std::vector<imagination::ContrastivePair>& pairs) {
  std::vector<DpoRecord> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    p.validate();
    out.push_back(DpoRecord{p.pair_id, p.question, p.image_id, p.r_d, p.r_u});
  }
  return out;
}

}  // namespace engage::crl
