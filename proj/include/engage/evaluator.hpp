#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "engage/core.hpp"
#include "engage/crl.hpp"
#include "engage/gateway.hpp"
#include "engage/json_io.hpp"
#include "engage/trainer.hpp"

namespace engage::evaluator {

enum class ParseStatus { clean, coerced, failed };
std::string_view to_string(ParseStatus s);
ParseStatus parse_parse_status(std::string_view s);

struct JudgmentRecord {
  std::string pair_id;
  std::string model_id;
  QuestionType qtype = QuestionType::FP;
  std::string response;
  Verdict verdict = Verdict::Misaligned;
  std::string raw_judge_output;
  ParseStatus parse_status = ParseStatus::failed;

  /// Failed records are Misaligned; Partial only for the ambiguous tier.
  void validate() const;
  bool operator==(const JudgmentRecord&) const = default;
};

void to_json(json& j, const JudgmentRecord& r);
void from_json(const json& j, JudgmentRecord& r);

struct ParsedJudgment {
  std::optional<Verdict> verdict;
  bool exact = false;  // the whole output was just the label
};

/// Earliest standalone True/Ambiguous/False, case-insensitive. An Ambiguous
/// label outside tier II counts as unparseable.
ParsedJudgment parse_judge_output(std::string_view output, QuestionType qtype);

using ImageIndex = std::map<std::string, ImageRecord>;

gateway::CompletionRequest judge_request(const ImageQuestionPair& pair, const std::string& response,
                                         const ImageIndex& images = {}, const gateway::Decoding& decoding = {});
/// The second attempt: the same request with a one-word answer constraint.
gateway::CompletionRequest judge_reprompt(const ImageQuestionPair& pair, const std::string& response,
                                          const ImageIndex& images = {}, const gateway::Decoding& decoding = {});

JudgmentRecord judge(const ImageQuestionPair& pair, const std::string& response, const std::string& model_id,
                     gateway::Gateway& judge_gw, const ImageIndex& images = {},
                     const gateway::Decoding& decoding = {});

// ---------------------------------------------------------------------------
// Model under test
// ---------------------------------------------------------------------------

class ModelUnderTest {
 public:
  virtual ~ModelUnderTest() = default;
  virtual std::string id() const = 0;
  /// Deterministic (temperature 0) answer to the pair's question.
  virtual std::string respond(const ImageQuestionPair& pair) = 0;
};

/// The request a gateway-backed model receives: the question with its image.
gateway::CompletionRequest response_request(const ImageQuestionPair& pair, const ImageIndex& images = {},
                                            std::size_t max_tokens = 1024);

class GatewayModel : public ModelUnderTest {
 public:
  GatewayModel(std::string id, gateway::Gateway& gw, ImageIndex images = {}, std::size_t max_tokens = 1024);
  std::string id() const override { return id_; }
  std::string respond(const ImageQuestionPair& pair) override;

 private:
  std::string id_;
  gateway::Gateway& gw_;
  ImageIndex images_;
  std::size_t max_tokens_;
};

/// A trained model decoded with the "good" token.
class TrainedModel : public ModelUnderTest {
 public:
  TrainedModel(std::string id, const trainer::TrainableModel& model, trainer::InferOptions opts = {});
  std::string id() const override { return id_; }
  std::string respond(const ImageQuestionPair& pair) override;

 private:
  std::string id_;
  const trainer::TrainableModel& model_;
  trainer::InferOptions opts_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Pure reduce over judgments (sorted by pair id internally). Raises
/// MissingTierCoverage when a tier has no pairs.
EvaluationReport compute_report(const std::string& model_id, std::vector<JudgmentRecord> judgments);

struct EvaluationRun {
  std::vector<JudgmentRecord> judgments;  // sorted by pair id
  EvaluationReport report;
  std::vector<ItemFailure> failures;      // model-side errors; those pairs are judged failed
};

struct EvaluationOptions {
  ImageIndex images;
  gateway::Decoding judge_decoding;
  std::size_t workers = 4;
};

EvaluationRun evaluate_model(ModelUnderTest& model, const std::vector<ImageQuestionPair>& benchmark,
                             gateway::Gateway& judge_gw, const EvaluationOptions& opts = {});

// ---------------------------------------------------------------------------
// Human validation of the judge
// ---------------------------------------------------------------------------

/// First n of a seeded permutation. SampleTooLarge when n exceeds the input.
std::vector<JudgmentRecord> sample_for_validation(const std::vector<JudgmentRecord>& judgments, std::size_t n,
                                                  std::uint64_t seed);

/// CSV with a blank human_agrees column; questions are filled from `pairs`
/// when available.
void write_worksheet(const std::filesystem::path& path, const std::vector<JudgmentRecord>& sample,
                     const std::vector<ImageQuestionPair>& pairs = {});

struct ValidationResult {
  std::size_t rows = 0;
  std::size_t agreements = 0;
  double accuracy = 0.0;
};

/// human_agrees accepts yes/no, y/n, true/false, 1/0; blanks are errors.
ValidationResult ingest_worksheet(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Mixture sweep
// ---------------------------------------------------------------------------

struct SweepConfig {
  std::vector<double> ratios = {0.2, 0.4, 0.6, 0.8, 1.0};
  std::uint64_t seed = 0;
  trainer::TrainConfig train;

  void validate() const;
};

struct SweepCell {
  double ratio = 0.0;
  std::optional<EvaluationReport> report;
  std::optional<ItemFailure> failure;
};

using ModelFactory = std::function<std::unique_ptr<trainer::TrainableModel>()>;

/// For each ratio: mix, train a fresh model, evaluate with the judge.
std::vector<SweepCell> run_mixture_sweep(const SweepConfig& cfg, const std::vector<crl::TrainingInstance>& engagement,
                                         const std::vector<crl::TrainingInstance>& general,
                                         const std::vector<ImageQuestionPair>& benchmark,
                                         gateway::Gateway& judge_gw, const ModelFactory& fresh_model,
                                         const EvaluationOptions& opts = {});

/// Toy-model factory over the union vocabulary of both sources.
ModelFactory toy_model_factory(const std::vector<crl::TrainingInstance>& engagement,
                               const std::vector<crl::TrainingInstance>& general, std::uint64_t seed);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepCell>& cells);

}  // namespace engage::evaluator
