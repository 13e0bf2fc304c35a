#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "engage/core.hpp"
#include "engage/imagination.hpp"
#include "engage/json_io.hpp"

namespace engage::crl {

enum class RewardToken { good, bad };
/// Literal surface forms: "good" and "bad".
std::string_view surface(RewardToken t);
RewardToken parse_reward_token(std::string_view s);

enum class Origin { engagement, general };
std::string_view to_string(Origin o);

/// Which objective an instance is shaped for.
enum class InstanceFormat { crl, sft, multi_turn };
std::string_view to_string(InstanceFormat f);

struct TrainingInstance {
  std::string id;
  std::string pair_id;  // empty for general data
  std::optional<RewardToken> condition;
  std::string question;
  std::string response;
  std::optional<std::string> image_id;
  Origin origin = Origin::engagement;
  std::optional<std::string> feedback;          // multi_turn only
  std::optional<std::string> initial_response;  // multi_turn only: the undesirable first answer
  InstanceFormat format = InstanceFormat::crl;

  /// Engagement crl instances carry a token; general ones never do; feedback
  /// appears only in multi_turn.
  void validate() const;
  bool operator==(const TrainingInstance&) const = default;
};

void to_json(json& j, const TrainingInstance& t);
void from_json(const json& j, TrainingInstance& t);

/// (good, q, r_d) and (bad, q, r_u); ids are "<pair_id>#good" / "#bad".
std::pair<TrainingInstance, TrainingInstance> to_crl_instances(const imagination::ContrastivePair& p);
std::vector<TrainingInstance> to_crl_instances(const std::vector<imagination::ContrastivePair>& pairs);

/// Reads a general instruction corpus of (question, response, optional
/// image_id, optional id) records. Missing ids become "general/<line>".
std::vector<TrainingInstance> read_general_source(const std::filesystem::path& path);

struct MixtureConfig {
  double rho = 1.0;
  std::uint64_t seed = 0;
  std::filesystem::path engagement_source;
  std::filesystem::path general_source;

  void validate() const;
};

/// floor(rho * n), robust to decimal rho that is not exactly representable.
std::size_t engagement_quota(double rho, std::size_t n);

struct MixResult {
  std::vector<TrainingInstance> instances;
  json manifest;  // counts, rho, seed, input digests; no timestamps
};

/// Samples floor(rho*|E|) engagement instances without replacement, adds all
/// general instances and shuffles, all from one seeded stream.
MixResult mix(const std::vector<TrainingInstance>& engagement, const std::vector<TrainingInstance>& general,
              const MixtureConfig& cfg);

/// File front end: reads both sources, writes `out` and `<out dir>/manifest.json`.
MixResult mix_files(const MixtureConfig& cfg, const std::filesystem::path& out);

/// SHA-256 of the canonical JSONL serialisation.
std::string digest_instances(const std::vector<TrainingInstance>& instances);

// ---------------------------------------------------------------------------
// Ablation formats
// ---------------------------------------------------------------------------

using FeedbackBank = std::map<QuestionType, std::string>;
/// One shipped feedback string per type.
FeedbackBank default_feedback_bank();

std::vector<TrainingInstance> to_sft_only(const std::vector<imagination::ContrastivePair>& pairs);
/// {q, r_u, f, r_d} with r_d as the target. MissingFeedback if a type present
/// in `pairs` has no feedback text.
std::vector<TrainingInstance> to_multi_turn(const std::vector<imagination::ContrastivePair>& pairs,
                                            const FeedbackBank& bank);

struct DpoRecord {
  std::string pair_id;
  std::string question;
  std::string image_id;
  std::string chosen;
  std::string rejected;

  bool operator==(const DpoRecord&) const = default;
};

void to_json(json& j, const DpoRecord& r);
void from_json(const json& j, DpoRecord& r);

std::vector<DpoRecord> to_dpo_export(const std::vector<imagination::ContrastivePair>& pairs);

}  // namespace engage::crl
