#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "engage/core.hpp"
#include "engage/gateway.hpp"
#include "engage/json_io.hpp"
#include "engage/question_factory.hpp"

namespace engage::imagination {

enum class Polarity { desirable, undesirable };
std::string_view to_string(Polarity p);

struct CriteriaSet {
  QuestionType qtype = QuestionType::FP;
  Polarity polarity = Polarity::desirable;
  std::string prompt_template;  // exactly one {Question}

  void validate() const;
};

/// The twelve shipped sets, ordered by type then polarity.
std::span<const CriteriaSet> builtin_criteria();
const CriteriaSet& criteria_set(QuestionType t, Polarity p);
/// Per-type task description sent ahead of the criteria.
const std::string& type_description(QuestionType t);

struct ContrastivePair {
  std::string pair_id;
  QuestionType qtype = QuestionType::FP;
  std::string question;
  std::string image_id;
  std::string r_d;
  std::string r_u;

  /// Both responses non-empty and distinct after trimming.
  void validate() const;
  bool operator==(const ContrastivePair&) const = default;
};

void to_json(json& j, const ContrastivePair& p);
void from_json(const json& j, ContrastivePair& p);

struct ImaginationConfig {
  questions::Mode mode = questions::Mode::macaroon_training;
  gateway::Decoding decoding;
  /// Abort the batch when failures / inputs exceeds this.
  double max_failure_rate = 0.1;
};

/// Image records used to attach the picture to each request; pairs whose
/// image is not listed are sent with the id only.
using ImageIndex = std::map<std::string, ImageRecord>;

gateway::CompletionRequest imagination_request(const ImageQuestionPair& pair, Polarity polarity,
                                               const ImageIndex& images,
                                               const gateway::Decoding& decoding);

ContrastivePair imagine_pair(const ImageQuestionPair& pair, gateway::Gateway& gw,
                             const ImageIndex& images = {}, const ImaginationConfig& cfg = {});

struct ImaginationRun {
  std::vector<ContrastivePair> pairs;  // input order
  std::vector<ItemFailure> failures;
};

/// Throws FailureRateExceeded when too many pairs fail.
ImaginationRun build_preference_dataset(const std::vector<ImageQuestionPair>& pairs,
                                        gateway::Gateway& gw, const ImageIndex& images = {},
                                        const ImaginationConfig& cfg = {});

}  // namespace engage::imagination
