#include "engage/multiturn.hpp"

#include <array>
#include <fstream>

#include "engage/assets.hpp"
#include "engage/csv.hpp"
#include "engage/text.hpp"

namespace engage::multiturn {

namespace {

std::string nonblank(const std::string& out, const std::string& what) {
  auto t = text::trim(out);
  if (t.empty()) throw Error(ErrorKind::EmptyResponse, "empty " + what);
  return t;
}

void require_field(const std::string& v, const char* name, const std::string& id) {
  if (text::trim(v).empty()) throw Error(ErrorKind::ValidationError, std::string(name) + " is empty for " + id);
}

double ratio(std::size_t a, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(n); }

}  // namespace

void FeedbackTurn::validate() const {
  require_field(pair_id, "pair_id", "feedback turn");
  require_field(initial_response, "initial_response", pair_id);
  require_field(simulated_feedback, "simulated_feedback", pair_id);
  require_field(final_response, "final_response", pair_id);
}

void to_json(json& j, const FeedbackTurn& t) {
  j = json{{"pair_id", t.pair_id},
           {"initial_response", t.initial_response},
           {"simulated_feedback", t.simulated_feedback},
           {"final_response", t.final_response}};
}

void from_json(const json& j, FeedbackTurn& t) {
  t.pair_id = require_string(j, "pair_id");
  t.initial_response = require_string(j, "initial_response");
  t.simulated_feedback = require_string(j, "simulated_feedback");
  t.final_response = require_string(j, "final_response");
  t.validate();
}

gateway::CompletionRequest feedback_request(const std::string& question, const std::string& initial_response,
                                            const std::string& final_response,
                                            const std::optional<ImageRecord>& image) {
  gateway::CompletionRequest req;
  req.user_prompt = text::fill_template(assets::get("feedback_simulation"),
                                        {{"Question", question},
                                         {"Rejected Response", initial_response},
                                         {"Preferred Response", final_response}});
  req.image = image;
  return req;
}

std::string simulate_feedback(const std::string& question, const std::string& initial_response,
                              const std::string& final_response, gateway::Gateway& gw,
                              const std::optional<ImageRecord>& image) {
  return nonblank(gw.complete(feedback_request(question, initial_response, final_response, image)),
                  "simulated feedback");
}

FeedbackTurn feedback_turn(const imagination::ContrastivePair& pair, gateway::Gateway& gw) {
  FeedbackTurn t{pair.pair_id, pair.r_u, "", pair.r_d};
  t.simulated_feedback =
      simulate_feedback(pair.question, pair.r_u, pair.r_d, gw, ImageRecord{pair.image_id, "", ""});
  return t;
}

bool looks_interrogative(std::string_view text_in) {
  if (text_in.find('?') != std::string_view::npos) return true;
  static const std::array<std::string_view, 14> heads{"which", "what", "who",  "whom", "where", "when", "why",
                                                      "how",   "could", "would", "can",  "do",    "are",  "is"};
  auto t = text::to_lower(text::trim(text_in));
  auto end = t.find_first_not_of("abcdefghijklmnopqrstuvwxyz");
  auto first = t.substr(0, end);
  for (auto h : heads)
    if (first == h) return true;
  return false;
}

gateway::CompletionRequest user_info_request(const std::string& question, const std::string& clarifying_response,
                                             const std::optional<std::string>& scenario,
                                             const std::optional<ImageRecord>& image) {
  std::string card;
  if (scenario && !text::trim(*scenario).empty()) card = "Scenario: " + text::trim(*scenario) + "\n";
  gateway::CompletionRequest req;
  req.user_prompt = text::fill_template(assets::get("user_info_simulation"),
                                        {{"Scenario", card}, {"Question", question}, {"Response", clarifying_response}});
  req.image = image;
  return req;
}

UserInfo simulate_user_info(const std::string& question, const std::string& clarifying_response,
                            gateway::Gateway& gw, const std::optional<std::string>& scenario,
                            const std::optional<ImageRecord>& image) {
  UserInfo info;
  info.non_interrogative = !looks_interrogative(clarifying_response);
  info.text = nonblank(gw.complete(user_info_request(question, clarifying_response, scenario, image)),
                       "simulated user information");
  return info;
}

gateway::CompletionRequest followup_request(const ImageQuestionPair& pair, const std::string& first_response,
                                            const std::string& user_info,
                                            const std::optional<ImageRecord>& image) {
  gateway::CompletionRequest req;
  req.user_prompt = text::fill_template(assets::get("followup_turn"), {{"Question", pair.question},
                                                                      {"Response", first_response},
                                                                      {"UserInfo", user_info}});
  req.image = image ? image : std::optional<ImageRecord>(ImageRecord{pair.image_id, "", ""});
  return req;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Winner w) { return w == Winner::first ? "first" : "second"; }

std::optional<Winner> parse_winner(std::string_view output) {
  auto f = text::find_word(output, "first");
  auto s = text::find_word(output, "second");
  if (f == std::string_view::npos && s == std::string_view::npos) return std::nullopt;
  return f < s ? Winner::first : Winner::second;
}

const std::string& ComparisonResult::picked_source() const {
  bool a_first = !order_swapped;
  bool picked_first = winner == Winner::first;
  return a_first == picked_first ? response_a_source : response_b_source;
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::a_wins: return "a_wins";
    case Outcome::b_wins: return "b_wins";
    case Outcome::tie: return "tie";
  }
  return "tie";
}

namespace {

Outcome parse_outcome(std::string_view s) {
  if (s == "a_wins") return Outcome::a_wins;
  if (s == "b_wins") return Outcome::b_wins;
  if (s == "tie") return Outcome::tie;
  throw Error(ErrorKind::ValidationError, "unknown outcome " + std::string(s));
}

Winner parse_winner_field(std::string_view s) {
  if (s == "first") return Winner::first;
  if (s == "second") return Winner::second;
  throw Error(ErrorKind::UnparseableWinner, "winner must be first or second, got " + std::string(s));
}

json result_json(const ComparisonResult& r) {
  return json{{"pair_id", r.pair_id},
              {"response_a_source", r.response_a_source},
              {"response_b_source", r.response_b_source},
              {"winner", to_string(r.winner)},
              {"order_swapped", r.order_swapped},
              {"raw_output", r.raw_output}};
}

ComparisonResult result_from(const json& j) {
  ComparisonResult r;
  r.pair_id = require_string(j, "pair_id");
  r.response_a_source = require_string(j, "response_a_source");
  r.response_b_source = require_string(j, "response_b_source");
  r.winner = parse_winner_field(require_string(j, "winner"));
  r.order_swapped = j.at("order_swapped").get<bool>();
  r.raw_output = j.value("raw_output", "");
  return r;
}

Outcome resolve(const ComparisonResult& fwd, const ComparisonResult& swp) {
  const auto& p1 = fwd.picked_source();
  const auto& p2 = swp.picked_source();
  if (p1 != p2) return Outcome::tie;
  return p1 == fwd.response_a_source ? Outcome::a_wins : Outcome::b_wins;
}

}  // namespace

void to_json(json& j, const ResolvedComparison& c) {
  j = json{{"pair_id", c.forward.pair_id},
           {"response_a_source", c.forward.response_a_source},
           {"response_b_source", c.forward.response_b_source},
           {"forward", result_json(c.forward)},
           {"swapped", result_json(c.swapped)},
           {"outcome", to_string(c.outcome)}};
}

void from_json(const json& j, ResolvedComparison& c) {
  c.forward = result_from(j.at("forward"));
  c.swapped = result_from(j.at("swapped"));
  if (c.forward.order_swapped || !c.swapped.order_swapped)
    throw Error(ErrorKind::ValidationError, "comparison orders are mislabelled for " + c.forward.pair_id);
  c.outcome = parse_outcome(require_string(j, "outcome"));
  if (c.outcome != resolve(c.forward, c.swapped))
    throw Error(ErrorKind::ValidationError, "outcome disagrees with the recorded orders for " + c.forward.pair_id);
}

gateway::CompletionRequest comparison_request(const std::string& question, const std::string& first,
                                              const std::string& second, const std::string& needs,
                                              const std::optional<ImageRecord>& image, bool constrained) {
  gateway::CompletionRequest req;
  if (!text::trim(needs).empty())
    req.system_prompt = text::fill_template(assets::get("comparison_needs"), {{"Needs", text::trim(needs)}});
  req.user_prompt = text::fill_template(assets::get("comparison"),
                                        {{"Question", question}, {"Response1", first}, {"Response2", second}});
  if (constrained) req.user_prompt += "\n\n" + assets::get("comparison_constrained");
  req.image = image;
  req.decoding.temperature = 0.0;
  req.decoding.max_tokens = 16;
  return req;
}

ResolvedComparison compare_responses(const CompareInput& in, gateway::Gateway& judge_gw) {
  if (in.source_a == in.source_b)
    throw Error(ErrorKind::ValidationError, "both responses come from " + in.source_a);
  std::array<gateway::CompletionRequest, 2> reqs{
      comparison_request(in.question, in.response_a, in.response_b, in.needs, in.image),
      comparison_request(in.question, in.response_b, in.response_a, in.needs, in.image)};
  auto outcomes = judge_gw.batch_complete({reqs[0], reqs[1]});

  std::array<ComparisonResult, 2> res;
  for (std::size_t i = 0; i < 2; ++i) {
    auto& o = outcomes[i];
    if (!o.ok()) throw Error(*o.error, o.error_message);
    auto w = parse_winner(o.text);
    std::string raw = o.text;
    if (!w) {
      auto cq = reqs[i];
      cq.user_prompt += "\n\n" + assets::get("comparison_constrained");
      auto second = judge_gw.complete(cq);
      raw += "\n[reprompt]\n" + second;
      w = parse_winner(second);
      if (!w)
        throw Error(ErrorKind::UnparseableWinner,
                    "no first/second in judge output for " + in.pair_id + (i ? " (swapped)" : " (forward)"));
    }
    res[i] = ComparisonResult{in.pair_id, in.source_a, in.source_b, *w, i == 1, raw};
  }
  ResolvedComparison c{res[0], res[1], Outcome::tie};
  c.outcome = resolve(c.forward, c.swapped);
  return c;
}

void to_json(json& j, const WinRateReport& r) {
  json per = json::object();
  for (const auto& [b, s] : r.per_baseline) {
    per[b] = json{{"wins", s.wins},
                  {"losses", s.losses},
                  {"ties", s.ties},
                  {"comparisons", s.wins + s.losses + s.ties},
                  {"win_rate", s.win_rate},
                  {"loss_rate", s.loss_rate},
                  {"tie_rate", s.tie_rate},
                  {"single_order_win_rate", s.single_order_win_rate}};
  }
  j = json{{"schema_version", kSchemaVersion}, {"subject", r.subject}, {"baselines", per}};
}

WinRateReport win_rate(const std::vector<ResolvedComparison>& comparisons, const std::string& subject,
                       const std::vector<std::string>& baselines) {
  WinRateReport rep{subject, {}};
  std::map<std::string, std::size_t> single;
  for (const auto& b : baselines) rep.per_baseline[b];
  for (const auto& c : comparisons) {
    const auto& a = c.forward.response_a_source;
    const auto& b = c.forward.response_b_source;
    std::string other;
    bool subject_is_a;
    if (a == subject) {
      other = b;
      subject_is_a = true;
    } else if (b == subject) {
      other = a;
      subject_is_a = false;
    } else {
      continue;
    }
    auto it = rep.per_baseline.find(other);
    if (it == rep.per_baseline.end()) continue;
    auto& s = it->second;
    if (c.outcome == Outcome::tie) {
      ++s.ties;
    } else if ((c.outcome == Outcome::a_wins) == subject_is_a) {
      ++s.wins;
    } else {
      ++s.losses;
    }
    if (c.forward.picked_source() == subject) ++single[other];
  }
  for (auto& [b, s] : rep.per_baseline) {
    auto n = s.wins + s.losses + s.ties;
    if (n == 0) throw Error(ErrorKind::EmptyGroup, "no comparisons against baseline " + b);
    s.win_rate = ratio(s.wins, n);
    s.loss_rate = ratio(s.losses, n);
    s.tie_rate = ratio(s.ties, n);
    s.single_order_win_rate = ratio(single[b], n);
  }
  return rep;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const DialogueTurn& t) {
  j = json{{"pair_id", t.pair_id},         {"question", t.question},
           {"first_response", t.first_response}, {"user_info", t.user_info},
           {"non_interrogative", t.non_interrogative}, {"final_response", t.final_response}};
}

void from_json(const json& j, DialogueTurn& t) {
  t.pair_id = require_string(j, "pair_id");
  t.question = require_string(j, "question");
  t.first_response = require_string(j, "first_response");
  t.user_info = require_string(j, "user_info");
  t.non_interrogative = j.value("non_interrogative", false);
  t.final_response = require_string(j, "final_response");
}

HarnessRun run_harness(const HarnessInput& in, gateway::Gateway& subject_gw, gateway::Gateway& simulator_gw,
                       gateway::Gateway& judge_gw) {
  if (in.pairs.empty()) throw Error(ErrorKind::EmptyInput, "multi-turn harness needs at least one pair");
  if (in.baselines.empty()) throw Error(ErrorKind::EmptyGroup, "multi-turn harness needs at least one baseline");
  for (const auto& [b, _] : in.baselines)
    if (b == in.subject_id) throw Error(ErrorKind::ValidationError, "baseline id equals subject id " + b);

  HarnessRun run;
  std::vector<std::string> baseline_ids;
  for (const auto& [b, _] : in.baselines) baseline_ids.push_back(b);

  for (const auto& pair : in.pairs) {
    try {
      pair.validate();
      auto img_it = in.images.find(pair.image_id);
      std::optional<ImageRecord> image =
          img_it != in.images.end() ? img_it->second : ImageRecord{pair.image_id, "", ""};

      gateway::CompletionRequest first_req;
      first_req.user_prompt = pair.question;
      first_req.image = image;
      DialogueTurn turn{pair.id, pair.question, "", "", false, ""};
      turn.first_response = nonblank(subject_gw.complete(first_req), "first response for " + pair.id);

      std::optional<std::string> scenario;
      if (auto s = in.scenarios.find(pair.id); s != in.scenarios.end()) scenario = s->second;
      auto info = simulate_user_info(pair.question, turn.first_response, simulator_gw, scenario, image);
      turn.user_info = info.text;
      turn.non_interrogative = info.non_interrogative;
      turn.final_response = nonblank(subject_gw.complete(followup_request(pair, turn.first_response, info.text, image)),
                                     "final response for " + pair.id);
      run.turns.push_back(turn);

      for (const auto& [b, responses] : in.baselines) {
        auto r = responses.find(pair.id);
        if (r == responses.end()) {
          run.failures.push_back({pair.id + "/" + b, ErrorKind::ValidationError, "baseline " + b + " has no response"});
          continue;
        }
        CompareInput ci{pair.id, pair.question, turn.final_response, in.subject_id, r->second, b, info.text, image};
        try {
          run.comparisons.push_back(compare_responses(ci, judge_gw));
        } catch (const Error& e) {
          run.failures.push_back({pair.id + "/" + b, e.kind(), e.detail()});
        }
      }
    } catch (const Error& e) {
      run.failures.push_back({pair.id, e.kind(), e.detail()});
    }
  }
  run.report = win_rate(run.comparisons, in.subject_id, baseline_ids);
  return run;
}

void write_win_rate_csv(const std::filesystem::path& path, const WinRateReport& report) {
  std::string out = csv::format_row({"subject", "baseline", "comparisons", "wins", "losses", "ties", "win_rate",
                                     "loss_rate", "tie_rate", "single_order_win_rate"});
  for (const auto& [b, s] : report.per_baseline) {
    out += csv::format_row({report.subject, b, std::to_string(s.wins + s.losses + s.ties), std::to_string(s.wins),
                            std::to_string(s.losses), std::to_string(s.ties), csv::format_number(s.win_rate),
                            csv::format_number(s.loss_rate), csv::format_number(s.tie_rate),
                            csv::format_number(s.single_order_win_rate)});
  }
  io::write_text(path, out);
}

}  // namespace engage::multiturn
