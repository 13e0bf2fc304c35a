#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "engage/core.hpp"
#include "engage/json_io.hpp"

namespace engage::annotation {

enum class Decision { accept, reject };
enum class ReasonTag { off_definition, not_diverse, biased, harmful, other };

std::string_view to_string(Decision d);
std::string_view to_string(ReasonTag t);
Decision parse_decision(std::string_view s);
ReasonTag parse_reason_tag(std::string_view s);

struct AnnotationDecision {
  std::string pair_id;
  std::string annotator_id;
  Decision verdict = Decision::accept;
  std::set<ReasonTag> reason_tags;
  std::optional<std::string> note;
  std::string timestamp;  // ISO-8601 UTC; filled by the store when empty

  /// A rejection needs at least one reason tag.
  void validate() const;
  /// Equal up to the timestamp; used for idempotent resubmission.
  bool same_content(const AnnotationDecision& other) const;
};

void to_json(json& j, const AnnotationDecision& d);
void from_json(const json& j, AnnotationDecision& d);

struct Assignment {
  std::string pair_id;
  std::array<std::string, 2> annotators;

  bool operator==(const Assignment&) const = default;
};

struct AnnotationQueue {
  std::vector<Assignment> assignments;                      // one per pair, input order
  std::map<std::string, std::vector<std::string>> pending;  // annotator -> pair ids
};

/// Each pair goes to two distinct annotators, dealt round-robin so the load
/// per annotator differs by at most one.
AnnotationQueue enqueue(const std::vector<ImageQuestionPair>& pairs,
                        const std::vector<std::string>& annotators);

struct Agreement {
  double kappa = 0.0;
  double raw_agreement = 0.0;
  std::size_t pairs = 0;
};

/// The two verdict vectors, ordered by assignment slot, for every pair.
/// Throws IncompleteAnnotations if any pair lacks a decision.
std::pair<std::vector<Decision>, std::vector<Decision>> decision_vectors(
    const std::vector<Assignment>& assignments, const std::vector<AnnotationDecision>& decisions);

Agreement compute_agreement(const std::vector<Assignment>& assignments,
                            const std::vector<AnnotationDecision>& decisions);

enum class ExportPolicy { both_accept, either_accept };
std::string_view to_string(ExportPolicy p);
ExportPolicy parse_export_policy(std::string_view s);

/// Pairs meeting the policy come back accepted; the rest are rejected and
/// omitted. Output is sorted by pair id.
std::vector<ImageQuestionPair> export_accepted(const std::vector<ImageQuestionPair>& pairs,
                                               const std::vector<Assignment>& assignments,
                                               const std::vector<AnnotationDecision>& decisions,
                                               ExportPolicy policy);

/// Review criteria shown to annotators for a question type.
std::string criteria_for(QuestionType t);

struct NextAssignment {
  ImageQuestionPair pair;
  std::size_t remaining = 0;  // pending count including this pair
};

/// Durable annotation state backed by an append-only JSONL journal. Opening
/// an existing journal replays it; the in-memory state is always a pure
/// function of the journal contents. Writers are serialised; readers share.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path journal);

  /// Adds candidate pairs and their dual assignment. Pair ids must be new.
  void enqueue(const std::vector<ImageQuestionPair>& pairs,
               const std::vector<std::string>& annotators);

  enum class Ack { stored, duplicate_identical };
  /// NotAssigned, DuplicateDecision, or ValidationError on bad input.
  Ack record_decision(AnnotationDecision d);

  std::optional<NextAssignment> next_for(const std::string& annotator) const;
  std::size_t pending_count(const std::string& annotator) const;
  Agreement agreement() const;
  std::vector<ImageQuestionPair> export_accepted(ExportPolicy policy) const;

  std::vector<ImageQuestionPair> pairs() const;
  std::vector<Assignment> assignments() const;
  std::vector<AnnotationDecision> decisions() const;
  std::optional<ImageQuestionPair> find_pair(const std::string& id) const;

  /// Derived view: pairs, assignments and decisions in a stable order.
  json snapshot() const;
  const std::filesystem::path& journal_path() const { return journal_; }

 private:
  void apply(const json& event);
  void append(const json& event);
  Ack check_decision(const AnnotationDecision& d) const;

  std::filesystem::path journal_;
  mutable std::shared_mutex mu_;
  std::vector<ImageQuestionPair> pairs_;
  std::vector<Assignment> assignments_;
  std::map<std::string, std::size_t> pair_index_;
  std::map<std::pair<std::string, std::string>, AnnotationDecision> decisions_;  // (pair, annotator)
  std::vector<std::pair<std::string, std::string>> decision_order_;
};

/// HTTP front end for the store.
///
///   GET  /api/next            -> assignment for the X-Annotator-Id header (204 when empty)
///   POST /api/decisions       -> record a decision
///   GET  /api/agreement       -> kappa and raw agreement (409 while incomplete)
///   POST /api/export          -> accepted pairs as JSONL
///   GET  /api/criteria        -> criteria text per type
///   GET  /api/images/<id>     -> image bytes from the manifest location
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, std::map<std::string, ImageRecord> images,
                   std::optional<std::filesystem::path> export_path = std::nullopt);
  ~AnnotationServer();

  /// Binds and returns the port; port 0 picks a free one.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();
  void wait_until_ready();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace engage::annotation
