#include "engage/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <mutex>

#include "engage/assets.hpp"
#include "engage/text.hpp"

namespace engage::annotation {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const AnnotationDecision* find_decision(const std::vector<AnnotationDecision>& ds,
                                        const std::string& pair, const std::string& annotator) {
  for (const auto& d : ds) {
    if (d.pair_id == pair && d.annotator_id == annotator) return &d;
  }
  return nullptr;
}

}  // namespace

std::string_view to_string(Decision d) { return d == Decision::accept ? "accept" : "reject"; }

std::string_view to_string(ReasonTag t) {
  switch (t) {
    case ReasonTag::off_definition: return "off_definition";
    case ReasonTag::not_diverse: return "not_diverse";
    case ReasonTag::biased: return "biased";
    case ReasonTag::harmful: return "harmful";
    case ReasonTag::other: return "other";
  }
  return "other";
}

Decision parse_decision(std::string_view s) {
  if (s == "accept") return Decision::accept;
  if (s == "reject") return Decision::reject;
  throw Error(ErrorKind::ValidationError, "unknown verdict '" + std::string(s) + "'");
}

ReasonTag parse_reason_tag(std::string_view s) {
  for (auto t : {ReasonTag::off_definition, ReasonTag::not_diverse, ReasonTag::biased,
                 ReasonTag::harmful, ReasonTag::other}) {
    if (to_string(t) == s) return t;
  }
  throw Error(ErrorKind::ValidationError, "unknown reason tag '" + std::string(s) + "'");
}

void AnnotationDecision::validate() const {
  if (pair_id.empty()) throw Error(ErrorKind::ValidationError, "decision without pair_id");
  if (annotator_id.empty()) throw Error(ErrorKind::ValidationError, "decision without annotator_id");
  if (verdict == Decision::reject && reason_tags.empty()) {
    throw Error(ErrorKind::ValidationError, "reject of " + pair_id + " needs a reason tag");
  }
}

bool AnnotationDecision::same_content(const AnnotationDecision& o) const {
  return pair_id == o.pair_id && annotator_id == o.annotator_id && verdict == o.verdict &&
         reason_tags == o.reason_tags && note == o.note;
}

void to_json(json& j, const AnnotationDecision& d) {
  json tags = json::array();
  for (auto t : d.reason_tags) tags.push_back(to_string(t));
  j = json{{"pair_id", d.pair_id},
           {"annotator_id", d.annotator_id},
           {"verdict", to_string(d.verdict)},
           {"reason_tags", tags},
           {"timestamp", d.timestamp}};
  if (d.note) j["note"] = *d.note;
}

void from_json(const json& j, AnnotationDecision& d) {
  check_schema_version(j);
  d.pair_id = require_string(j, "pair_id");
  d.annotator_id = j.contains("annotator_id") ? j.at("annotator_id").get<std::string>() : "";
  d.verdict = parse_decision(require_string(j, "verdict"));
  d.reason_tags.clear();
  if (j.contains("reason_tags")) {
    if (!j.at("reason_tags").is_array()) {
      throw Error(ErrorKind::ValidationError, "reason_tags must be an array");
    }
    for (const auto& t : j.at("reason_tags")) d.reason_tags.insert(parse_reason_tag(t.get<std::string>()));
  }
  d.note.reset();
  if (j.contains("note") && !j.at("note").is_null()) d.note = j.at("note").get<std::string>();
  d.timestamp = j.value("timestamp", "");
}

AnnotationQueue enqueue(const std::vector<ImageQuestionPair>& pairs,
                        const std::vector<std::string>& annotators) {
  std::set<std::string> distinct(annotators.begin(), annotators.end());
  if (distinct.size() < 2 || distinct.size() != annotators.size()) {
    throw Error(ErrorKind::InsufficientAnnotators,
                "need at least 2 distinct annotators, got " + std::to_string(distinct.size()));
  }
  AnnotationQueue q;
  for (const auto& a : annotators) q.pending[a];
  std::set<std::string> seen;
  const std::size_t k = annotators.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    p.validate();
    if (p.status != PairStatus::candidate) {
      throw Error(ErrorKind::ValidationError, "pair " + p.id + " is not a candidate");
    }
    if (!seen.insert(p.id).second) throw Error(ErrorKind::ValidationError, "duplicate pair " + p.id);
    // Slots 2i and 2i+1 mod k: consecutive deals, so the two annotators differ.
    Assignment a{p.id, {annotators[(2 * i) % k], annotators[(2 * i + 1) % k]}};
    q.pending[a.annotators[0]].push_back(p.id);
    q.pending[a.annotators[1]].push_back(p.id);
    q.assignments.push_back(std::move(a));
  }
  return q;
}

std::pair<std::vector<Decision>, std::vector<Decision>> decision_vectors(
    const std::vector<Assignment>& assignments, const std::vector<AnnotationDecision>& decisions) {
  std::vector<Decision> first, second;
  std::size_t missing = 0;
  for (const auto& a : assignments) {
    const auto* d0 = find_decision(decisions, a.pair_id, a.annotators[0]);
    const auto* d1 = find_decision(decisions, a.pair_id, a.annotators[1]);
    if (!d0 || !d1) {
      ++missing;
      continue;
    }
    first.push_back(d0->verdict);
    second.push_back(d1->verdict);
  }
  if (missing > 0) {
    throw Error(ErrorKind::IncompleteAnnotations,
                std::to_string(missing) + " of " + std::to_string(assignments.size()) +
                    " pairs lack two decisions");
  }
  return {std::move(first), std::move(second)};
}

Agreement compute_agreement(const std::vector<Assignment>& assignments,
                            const std::vector<AnnotationDecision>& decisions) {
  auto [a, b] = decision_vectors(assignments, decisions);
  Agreement out;
  out.pairs = a.size();
  out.kappa = cohen_kappa(a, b);
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
  out.raw_agreement = static_cast<double>(same) / static_cast<double>(a.size());
  return out;
}

std::string_view to_string(ExportPolicy p) {
  return p == ExportPolicy::both_accept ? "both_accept" : "either_accept";
}

ExportPolicy parse_export_policy(std::string_view s) {
  if (s == "both_accept") return ExportPolicy::both_accept;
  if (s == "either_accept") return ExportPolicy::either_accept;
  throw Error(ErrorKind::ValidationError, "unknown export policy '" + std::string(s) + "'");
}

std::vector<ImageQuestionPair> export_accepted(const std::vector<ImageQuestionPair>& pairs,
                                               const std::vector<Assignment>& assignments,
                                               const std::vector<AnnotationDecision>& decisions,
                                               ExportPolicy policy) {
  auto [a, b] = decision_vectors(assignments, decisions);
  std::map<std::string, const ImageQuestionPair*> by_id;
  for (const auto& p : pairs) by_id[p.id] = &p;

  std::vector<ImageQuestionPair> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const bool x = a[i] == Decision::accept, y = b[i] == Decision::accept;
    const bool keep = policy == ExportPolicy::both_accept ? (x && y) : (x || y);
    if (!keep) continue;
    auto it = by_id.find(assignments[i].pair_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::ValidationError, "assigned pair " + assignments[i].pair_id + " unknown");
    }
    ImageQuestionPair p = *it->second;
    p.status = PairStatus::candidate;
    p.accept();
    out.push_back(std::move(p));
  }
  std::sort(out.begin(), out.end(), [](const auto& l, const auto& r) { return l.id < r.id; });
  return out;
}

std::string criteria_for(QuestionType t) {
  return assets::get("criteria_" + text::to_lower(code(t))) + "\n\n" + assets::get("criteria_general");
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

AnnotationStore::AnnotationStore(std::filesystem::path journal) : journal_(std::move(journal)) {
  if (!std::filesystem::exists(journal_)) return;
  const auto events = io::read_jsonl(journal_);
  for (std::size_t i = 0; i < events.size(); ++i) {
    try {
      apply(events[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), journal_.filename().string() + " event " + std::to_string(i + 1) +
                                ": " + e.detail());
    }
  }
}

void AnnotationStore::append(const json& event) {
  if (journal_.has_parent_path()) std::filesystem::create_directories(journal_.parent_path());
  const std::string line = event.dump() + "\n";
  const int fd = ::open(journal_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorKind::IoError, "cannot open journal: " + std::string(std::strerror(errno)));
  // O_APPEND makes the single write land atomically at the end.
  const auto n = ::write(fd, line.data(), line.size());
  const bool ok = n == static_cast<ssize_t>(line.size()) && ::fsync(fd) == 0;
  ::close(fd);
  if (!ok) throw Error(ErrorKind::IoError, "journal append failed");
}

void AnnotationStore::apply(const json& event) {
  check_schema_version(event);
  const auto kind = require_string(event, "event");
  if (kind == "enqueue") {
    auto pairs = event.at("pairs").get<std::vector<ImageQuestionPair>>();
    for (const auto& a : event.at("assignments")) {
      Assignment as;
      as.pair_id = a.at("pair_id").get<std::string>();
      as.annotators = a.at("annotators").get<std::array<std::string, 2>>();
      assignments_.push_back(std::move(as));
    }
    for (auto& p : pairs) {
      pair_index_[p.id] = pairs_.size();
      pairs_.push_back(std::move(p));
    }
  } else if (kind == "decision") {
    auto d = event.at("decision").get<AnnotationDecision>();
    auto key = std::make_pair(d.pair_id, d.annotator_id);
    if (decisions_.emplace(key, std::move(d)).second) decision_order_.push_back(key);
  } else {
    throw Error(ErrorKind::ValidationError, "unknown journal event '" + kind + "'");
  }
}

void AnnotationStore::enqueue(const std::vector<ImageQuestionPair>& pairs,
                              const std::vector<std::string>& annotators) {
  auto q = annotation::enqueue(pairs, annotators);
  std::unique_lock lock(mu_);
  for (const auto& p : pairs) {
    if (pair_index_.count(p.id)) throw Error(ErrorKind::ValidationError, "pair " + p.id + " already queued");
  }
  json as = json::array();
  for (const auto& a : q.assignments) as.push_back({{"pair_id", a.pair_id}, {"annotators", a.annotators}});
  json event{{"schema_version", kSchemaVersion}, {"event", "enqueue"}, {"pairs", pairs}, {"assignments", as}};
  append(event);
  apply(event);
}

AnnotationStore::Ack AnnotationStore::check_decision(const AnnotationDecision& d) const {
  auto it = pair_index_.find(d.pair_id);
  if (it == pair_index_.end()) throw Error(ErrorKind::NotAssigned, "unknown pair " + d.pair_id);
  const auto& as = assignments_[it->second];
  if (as.annotators[0] != d.annotator_id && as.annotators[1] != d.annotator_id) {
    throw Error(ErrorKind::NotAssigned, d.pair_id + " is not assigned to " + d.annotator_id);
  }
  auto prior = decisions_.find({d.pair_id, d.annotator_id});
  if (prior != decisions_.end()) {
    if (prior->second.same_content(d)) return Ack::duplicate_identical;
    throw Error(ErrorKind::DuplicateDecision,
                d.annotator_id + " already decided " + d.pair_id + " differently");
  }
  return Ack::stored;
}

AnnotationStore::Ack AnnotationStore::record_decision(AnnotationDecision d) {
  d.validate();
  std::unique_lock lock(mu_);
  const auto ack = check_decision(d);
  if (ack == Ack::duplicate_identical) return ack;
  if (d.timestamp.empty()) d.timestamp = utc_now();
  json event{{"schema_version", kSchemaVersion}, {"event", "decision"}, {"decision", d}};
  append(event);
  apply(event);
  return Ack::stored;
}

std::optional<NextAssignment> AnnotationStore::next_for(const std::string& annotator) const {
  std::shared_lock lock(mu_);
  std::optional<NextAssignment> out;
  std::size_t remaining = 0;
  for (const auto& a : assignments_) {
    if (a.annotators[0] != annotator && a.annotators[1] != annotator) continue;
    if (decisions_.count({a.pair_id, annotator})) continue;
    if (!out) out = NextAssignment{pairs_[pair_index_.at(a.pair_id)], 0};
    ++remaining;
  }
  if (out) out->remaining = remaining;
  return out;
}

std::size_t AnnotationStore::pending_count(const std::string& annotator) const {
  auto n = next_for(annotator);
  return n ? n->remaining : 0;
}

std::vector<AnnotationDecision> AnnotationStore::decisions() const {
  std::shared_lock lock(mu_);
  std::vector<AnnotationDecision> out;
  out.reserve(decision_order_.size());
  for (const auto& k : decision_order_) out.push_back(decisions_.at(k));
  return out;
}

Agreement AnnotationStore::agreement() const {
  std::shared_lock lock(mu_);
  std::vector<AnnotationDecision> ds;
  for (const auto& k : decision_order_) ds.push_back(decisions_.at(k));
  return compute_agreement(assignments_, ds);
}

std::vector<ImageQuestionPair> AnnotationStore::export_accepted(ExportPolicy policy) const {
  std::shared_lock lock(mu_);
  std::vector<AnnotationDecision> ds;
  for (const auto& k : decision_order_) ds.push_back(decisions_.at(k));
  return annotation::export_accepted(pairs_, assignments_, ds, policy);
}

std::vector<ImageQuestionPair> AnnotationStore::pairs() const {
  std::shared_lock lock(mu_);
  return pairs_;
}

std::vector<Assignment> AnnotationStore::assignments() const {
  std::shared_lock lock(mu_);
  return assignments_;
}

std::optional<ImageQuestionPair> AnnotationStore::find_pair(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = pair_index_.find(id);
  if (it == pair_index_.end()) return std::nullopt;
  return pairs_[it->second];
}

json AnnotationStore::snapshot() const {
  std::shared_lock lock(mu_);
  json ps = json::array(), as = json::array(), ds = json::array();
  for (const auto& p : pairs_) ps.push_back(p);
  for (const auto& a : assignments_) as.push_back({{"pair_id", a.pair_id}, {"annotators", a.annotators}});
  for (const auto& [k, d] : decisions_) ds.push_back(d);  // map order: (pair, annotator)
  return json{{"schema_version", kSchemaVersion}, {"pairs", ps}, {"assignments", as}, {"decisions", ds}};
}

}  // namespace engage::annotation
