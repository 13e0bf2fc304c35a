#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "engage/core.hpp"
#include "engage/gateway.hpp"
#include "engage/imagination.hpp"
#include "engage/json_io.hpp"

namespace engage::multiturn {

// ---------------------------------------------------------------------------
// Simulated second turn
// ---------------------------------------------------------------------------

struct FeedbackTurn {
  std::string pair_id;
  std::string initial_response;
  std::string simulated_feedback;
  std::string final_response;

  void validate() const;
  bool operator==(const FeedbackTurn&) const = default;
};

void to_json(json& j, const FeedbackTurn& t);
void from_json(const json& j, FeedbackTurn& t);

gateway::CompletionRequest feedback_request(const std::string& question, const std::string& initial_response,
                                            const std::string& final_response,
                                            const std::optional<ImageRecord>& image = std::nullopt);

/// Imagined human feedback that turns the initial answer into the final one.
std::string simulate_feedback(const std::string& question, const std::string& initial_response,
                              const std::string& final_response, gateway::Gateway& gw,
                              const std::optional<ImageRecord>& image = std::nullopt);

/// Feedback for a contrastive pair: r_u is the initial answer, r_d the final.
FeedbackTurn feedback_turn(const imagination::ContrastivePair& pair, gateway::Gateway& gw);

/// Heuristic: a question mark, or a leading interrogative word.
bool looks_interrogative(std::string_view text);

struct UserInfo {
  std::string text;
  bool non_interrogative = false;  // the clarifying reply did not look like a question
};

gateway::CompletionRequest user_info_request(const std::string& question, const std::string& clarifying_response,
                                             const std::optional<std::string>& scenario = std::nullopt,
                                             const std::optional<ImageRecord>& image = std::nullopt);

UserInfo simulate_user_info(const std::string& question, const std::string& clarifying_response,
                            gateway::Gateway& gw, const std::optional<std::string>& scenario = std::nullopt,
                            const std::optional<ImageRecord>& image = std::nullopt);

/// The model's second turn after the user supplied information.
gateway::CompletionRequest followup_request(const ImageQuestionPair& pair, const std::string& first_response,
                                            const std::string& user_info,
                                            const std::optional<ImageRecord>& image = std::nullopt);

// ---------------------------------------------------------------------------
// Pairwise comparison
// ---------------------------------------------------------------------------

enum class Winner { first, second };
std::string_view to_string(Winner w);

/// Earliest standalone "first" or "second", case-insensitive.
std::optional<Winner> parse_winner(std::string_view output);

/// One judged ordering. Response A is shown first unless order_swapped.
struct ComparisonResult {
  std::string pair_id;
  std::string response_a_source;
  std::string response_b_source;
  Winner winner = Winner::first;
  bool order_swapped = false;
  std::string raw_output;

  /// Source id of the response the judge picked.
  const std::string& picked_source() const;
  bool operator==(const ComparisonResult&) const = default;
};

enum class Outcome { a_wins, b_wins, tie };
std::string_view to_string(Outcome o);

struct ResolvedComparison {
  ComparisonResult forward;
  ComparisonResult swapped;
  Outcome outcome = Outcome::tie;  // tie when the two orders disagree

  bool operator==(const ResolvedComparison&) const = default;
};

void to_json(json& j, const ResolvedComparison& c);
void from_json(const json& j, ResolvedComparison& c);

gateway::CompletionRequest comparison_request(const std::string& question, const std::string& first,
                                              const std::string& second, const std::string& needs,
                                              const std::optional<ImageRecord>& image = std::nullopt,
                                              bool constrained = false);

struct CompareInput {
  std::string pair_id;
  std::string question;
  std::string response_a;
  std::string source_a;
  std::string response_b;
  std::string source_b;
  std::string needs;
  std::optional<ImageRecord> image;
};

/// Judges both orders; UnparseableWinner if an order stays unparseable
/// after one constrained reprompt.
ResolvedComparison compare_responses(const CompareInput& in, gateway::Gateway& judge_gw);

struct BaselineRates {
  std::size_t wins = 0, losses = 0, ties = 0;
  double win_rate = 0.0, loss_rate = 0.0, tie_rate = 0.0;
  double single_order_win_rate = 0.0;  // forward order only, no swap control
};

struct WinRateReport {
  std::string subject;
  std::map<std::string, BaselineRates> per_baseline;
};

void to_json(json& j, const WinRateReport& r);

/// Rates of `subject` against each listed baseline. EmptyGroup when a
/// baseline has no comparisons.
WinRateReport win_rate(const std::vector<ResolvedComparison>& comparisons, const std::string& subject,
                       const std::vector<std::string>& baselines);

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

struct DialogueTurn {
  std::string pair_id;
  std::string question;
  std::string first_response;
  std::string user_info;
  bool non_interrogative = false;
  std::string final_response;

  bool operator==(const DialogueTurn&) const = default;
};

void to_json(json& j, const DialogueTurn& t);
void from_json(const json& j, DialogueTurn& t);

struct HarnessInput {
  std::string subject_id;
  std::vector<ImageQuestionPair> pairs;
  /// baseline id -> (pair id -> single-turn response)
  std::map<std::string, std::map<std::string, std::string>> baselines;
  /// Optional per-pair scenario card for the user simulator.
  std::map<std::string, std::string> scenarios;
  std::map<std::string, ImageRecord> images;
};

struct HarnessRun {
  std::vector<DialogueTurn> turns;
  std::vector<ResolvedComparison> comparisons;
  std::vector<ItemFailure> failures;
  WinRateReport report;
};

/// Subject model answers, the simulator supplies user information, the
/// subject answers again, and the judge compares the final answer against
/// every baseline's single-turn answer.
HarnessRun run_harness(const HarnessInput& in, gateway::Gateway& subject_gw, gateway::Gateway& simulator_gw,
                       gateway::Gateway& judge_gw);

void write_win_rate_csv(const std::filesystem::path& path, const WinRateReport& report);

}  // namespace engage::multiturn
