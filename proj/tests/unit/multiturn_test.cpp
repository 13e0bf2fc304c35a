#include <gtest/gtest.h>

#include <filesystem>
#include <functional>

#include "engage/assets.hpp"
#include "engage/csv.hpp"
#include "engage/multiturn.hpp"
#include "engage/text.hpp"

namespace engage::multiturn {
namespace {

using gateway::CompletionRequest;
using gateway::Gateway;

class FnBackend : public gateway::Backend {
 public:
  explicit FnBackend(std::function<std::string(const CompletionRequest&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const CompletionRequest& req) override {
    std::lock_guard lk(mu_);
    seen.push_back(req);
    return fn_(req);
  }
  std::vector<CompletionRequest> seen;

 private:
  std::function<std::string(const CompletionRequest&)> fn_;
  std::mutex mu_;
};

std::shared_ptr<FnBackend> fn_backend(std::function<std::string(const CompletionRequest&)> fn) {
  return std::make_shared<FnBackend>(std::move(fn));
}

// Picks whichever slot holds the response containing `marker`.
std::string pick_marker(const CompletionRequest& req, const std::string& marker) {
  const auto& u = req.user_prompt;
  auto a = u.find("first response to the question:");
  auto b = u.find("second response to the question:");
  auto m = u.find(marker, a);
  return (m != std::string::npos && m < b) ? "first" : "second";
}

ImageQuestionPair mt_pair(const std::string& id, const std::string& q = "Is the man wearing a red shirt?") {
  ImageQuestionPair p;
  p.id = id;
  p.image_id = id.substr(0, id.find('/'));
  p.question = q;
  p.qtype = QuestionType::SA;
  p.accept();
  return p;
}

ResolvedComparison make_cmp(const std::string& id, const std::string& a, const std::string& b, Outcome o) {
  ResolvedComparison c;
  c.forward = {id, a, b, Winner::first, false, ""};
  c.swapped = {id, a, b, Winner::second, true, ""};
  if (o == Outcome::b_wins) {
    c.forward.winner = Winner::second;
    c.swapped.winner = Winner::first;
  } else if (o == Outcome::tie) {
    c.swapped.winner = Winner::first;
  }
  c.outcome = o;
  return c;
}

TEST(ParseWinner, EarliestWordWins) {
  EXPECT_EQ(parse_winner("The first one seems better."), Winner::first);
  EXPECT_EQ(parse_winner("SECOND"), Winner::second);
  EXPECT_EQ(parse_winner("second, not the first"), Winner::second);
  EXPECT_FALSE(parse_winner("firstly neither").has_value());
  EXPECT_FALSE(parse_winner("").has_value());
}

TEST(Feedback, FillsTemplateAndRejectsBlank) {
  auto be = fn_backend([](const CompletionRequest&) { return "  Ask which man I mean.  "; });
  Gateway gw(be, 1);
  auto fb = simulate_feedback("Is the man wearing a red shirt?", "Yes.", "Which man?", gw);
  EXPECT_EQ(fb, "Ask which man I mean.");
  ASSERT_EQ(be->seen.size(), 1u);
  EXPECT_NE(be->seen[0].user_prompt.find("initial response generated by the model:Yes."), std::string::npos);
  EXPECT_NE(be->seen[0].user_prompt.find("after feedback was given: Which man?."), std::string::npos);

  Gateway blank(fn_backend([](const CompletionRequest&) { return " \n"; }), 1);
  try {
    simulate_feedback("q", "a", "b", blank);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyResponse);
  }
}

TEST(Feedback, TurnFromContrastivePair) {
  Gateway gw(fn_backend([](const CompletionRequest&) { return "Too confident."; }), 1);
  imagination::ContrastivePair cp{"img/sa", QuestionType::SA, "Is he tall?", "img", "Which one?", "Yes."};
  auto t = feedback_turn(cp, gw);
  EXPECT_EQ(t, (FeedbackTurn{"img/sa", "Yes.", "Too confident.", "Which one?"}));
  json j = t;
  EXPECT_EQ(j.get<FeedbackTurn>(), t);
}

TEST(UserInfo, FlagsNonInterrogativeReply) {
  Gateway gw(fn_backend([](const CompletionRequest&) { return "I mean the man on the left."; }), 1);
  auto asked = simulate_user_info("Is the man tall?", "Which man do you mean?", gw);
  EXPECT_FALSE(asked.non_interrogative);
  auto stated = simulate_user_info("Is the man tall?", "The man is tall.", gw);
  EXPECT_TRUE(stated.non_interrogative);
  EXPECT_EQ(stated.text, "I mean the man on the left.");
  EXPECT_TRUE(looks_interrogative("could you clarify"));
  EXPECT_FALSE(looks_interrogative("Island life."));
}

TEST(UserInfo, ScenarioCardIsPrefixed) {
  auto be = fn_backend([](const CompletionRequest&) { return "I am vegetarian."; });
  Gateway gw(be, 1);
  simulate_user_info("What should I order?", "Any dietary needs?", gw, std::string("vegetarian diner"));
  simulate_user_info("What should I order?", "Any dietary needs?", gw);
  ASSERT_EQ(be->seen.size(), 2u);
  EXPECT_NE(be->seen[0].user_prompt.find("Scenario: vegetarian diner\nHere is the question"), std::string::npos);
  EXPECT_EQ(be->seen[1].user_prompt.find("Scenario"), std::string::npos);
  EXPECT_NE(be->seen[1].user_prompt.find("constraints in one to three short sentences. Do not ask anything back "
                                         "and do not comment on the model.\nHere is the question"),
            std::string::npos);
}

TEST(Compare, NeedsGoInSystemPrompt) {
  auto req = comparison_request("q", "r1", "r2", "I like red.");
  EXPECT_EQ(req.system_prompt, "The human needs stated in natural language: I like red.");
  EXPECT_NE(req.user_prompt.find("first response to the question: r1"), std::string::npos);
  EXPECT_NE(req.user_prompt.find("second response to the question: r2"), std::string::npos);
  EXPECT_EQ(req.user_prompt.find(assets::get("comparison_constrained")), std::string::npos);
  EXPECT_TRUE(comparison_request("q", "r1", "r2", "", std::nullopt).system_prompt.empty());
  EXPECT_NE(comparison_request("q", "r1", "r2", "", std::nullopt, true).user_prompt.find("exactly one word"),
            std::string::npos);
}

TEST(Compare, ConsistentJudgeDecides) {
  Gateway gw(fn_backend([](const CompletionRequest& r) { return pick_marker(r, "TAILORED"); }), 2);
  CompareInput in{"p1", "q", "TAILORED answer", "macaroon", "plain answer", "base", "needs", std::nullopt};
  auto c = compare_responses(in, gw);
  EXPECT_EQ(c.outcome, Outcome::a_wins);
  EXPECT_EQ(c.forward.winner, Winner::first);
  EXPECT_EQ(c.swapped.winner, Winner::second);
  EXPECT_FALSE(c.forward.order_swapped);
  EXPECT_TRUE(c.swapped.order_swapped);
  EXPECT_EQ(c.forward.picked_source(), "macaroon");
  EXPECT_EQ(c.swapped.picked_source(), "macaroon");

  CompareInput rev{"p1", "q", "plain answer", "macaroon", "TAILORED answer", "base", "needs", std::nullopt};
  EXPECT_EQ(compare_responses(rev, gw).outcome, Outcome::b_wins);
}

TEST(Compare, AlwaysFirstJudgeYieldsTie) {
  Gateway gw(fn_backend([](const CompletionRequest&) { return "first"; }), 2);
  CompareInput in{"p1", "q", "a", "macaroon", "b", "base", "", std::nullopt};
  auto c = compare_responses(in, gw);
  EXPECT_EQ(c.outcome, Outcome::tie);
  EXPECT_EQ(c.forward.picked_source(), "macaroon");
  EXPECT_EQ(c.swapped.picked_source(), "base");
}

TEST(Compare, RepromptThenUnparseable) {
  auto be = fn_backend([](const CompletionRequest& r) {
    return r.user_prompt.find("exactly one word") != std::string::npos ? "second" : "both are fine";
  });
  Gateway gw(be, 1);
  CompareInput in{"p1", "q", "a", "m", "b", "base", "", std::nullopt};
  auto c = compare_responses(in, gw);
  EXPECT_EQ(c.forward.winner, Winner::second);
  EXPECT_EQ(c.forward.raw_output, "both are fine\n[reprompt]\nsecond");
  EXPECT_EQ(be->seen.size(), 4u);

  Gateway never(fn_backend([](const CompletionRequest&) { return "cannot decide"; }), 1);
  try {
    compare_responses(in, never);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnparseableWinner);
  }
}

TEST(Compare, RoundTripsAndRejectsTamperedOutcome) {
  auto c = make_cmp("p", "m", "b", Outcome::a_wins);
  json j = c;
  EXPECT_EQ(j.get<ResolvedComparison>(), c);
  j["outcome"] = "tie";
  EXPECT_THROW(j.get<ResolvedComparison>(), Error);
  json k = c;
  k["forward"]["winner"] = "third";
  try {
    k.get<ResolvedComparison>();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnparseableWinner);
  }
}

TEST(WinRate, HandComputedRates) {
  std::vector<ResolvedComparison> cs;
  for (int i = 0; i < 7; ++i) cs.push_back(make_cmp("w" + std::to_string(i), "m", "llava", Outcome::a_wins));
  for (int i = 0; i < 3; ++i) cs.push_back(make_cmp("l" + std::to_string(i), "m", "llava", Outcome::b_wins));
  // subject on the b side counts too
  cs.push_back(make_cmp("x0", "gpt", "m", Outcome::b_wins));
  cs.push_back(make_cmp("x1", "gpt", "m", Outcome::tie));
  cs.push_back(make_cmp("x2", "gpt", "m", Outcome::tie));
  cs.push_back(make_cmp("x3", "gpt", "m", Outcome::a_wins));

  auto r = win_rate(cs, "m", {"llava", "gpt"});
  const auto& l = r.per_baseline.at("llava");
  EXPECT_EQ(l.wins, 7u);
  EXPECT_EQ(l.losses, 3u);
  EXPECT_EQ(l.ties, 0u);
  EXPECT_DOUBLE_EQ(l.win_rate, 0.70);
  EXPECT_DOUBLE_EQ(l.loss_rate, 0.30);
  EXPECT_DOUBLE_EQ(l.single_order_win_rate, 0.70);
  const auto& g = r.per_baseline.at("gpt");
  EXPECT_DOUBLE_EQ(g.win_rate, 0.25);
  EXPECT_DOUBLE_EQ(g.loss_rate, 0.25);
  EXPECT_DOUBLE_EQ(g.tie_rate, 0.50);
  // forward order: x0 picks m, x1 (tie built with forward=first) picks gpt, x2 gpt, x3 gpt
  EXPECT_DOUBLE_EQ(g.single_order_win_rate, 0.25);
  for (const auto& [_, s] : r.per_baseline) EXPECT_DOUBLE_EQ(s.win_rate + s.loss_rate + s.tie_rate, 1.0);
}

TEST(WinRate, EmptyGroupRaises) {
  std::vector<ResolvedComparison> cs{make_cmp("p", "m", "llava", Outcome::a_wins)};
  try {
    win_rate(cs, "m", {"llava", "instructblip"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyGroup);
    EXPECT_NE(std::string(e.what()).find("instructblip"), std::string::npos);
  }
}

TEST(WinRate, PositionalBiasProbeIsAllTies) {
  Gateway judge(fn_backend([](const CompletionRequest&) { return "first"; }), 2);
  std::vector<ResolvedComparison> cs;
  for (int i = 0; i < 20; ++i) {
    CompareInput in{"p" + std::to_string(i), "q", "a" + std::to_string(i), "m", "b", "base", "", std::nullopt};
    cs.push_back(compare_responses(in, judge));
  }
  auto r = win_rate(cs, "m", {"base"});
  EXPECT_DOUBLE_EQ(r.per_baseline.at("base").tie_rate, 1.0);
  EXPECT_DOUBLE_EQ(r.per_baseline.at("base").win_rate, 0.0);
  // the uncontrolled single-order number is fooled completely
  EXPECT_DOUBLE_EQ(r.per_baseline.at("base").single_order_win_rate, 1.0);
}

TEST(Harness, EndToEndWithScriptedRoles) {
  auto subject = fn_backend([](const CompletionRequest& r) {
    if (r.user_prompt.find("Your previous reply:") != std::string::npos) return std::string("TAILORED: the left man.");
    return std::string("Which man do you mean?");
  });
  auto sim = fn_backend([](const CompletionRequest&) { return "The one on the left."; });
  auto judge = fn_backend([](const CompletionRequest& r) { return pick_marker(r, "TAILORED"); });
  Gateway sgw(subject, 1), simgw(sim, 1), jgw(judge, 2);

  HarnessInput in;
  in.subject_id = "macaroon";
  in.pairs = {mt_pair("a/sa"), mt_pair("b/sa")};
  in.baselines["llava"] = {{"a/sa", "Yes."}, {"b/sa", "No."}};
  in.baselines["gpt"] = {{"a/sa", "Yes he is."}};
  in.scenarios["a/sa"] = "shopping for a shirt";

  auto run = run_harness(in, sgw, simgw, jgw);
  ASSERT_EQ(run.turns.size(), 2u);
  EXPECT_EQ(run.turns[0].final_response, "TAILORED: the left man.");
  EXPECT_FALSE(run.turns[0].non_interrogative);
  EXPECT_EQ(run.comparisons.size(), 3u);
  ASSERT_EQ(run.failures.size(), 1u);
  EXPECT_EQ(run.failures[0].item_id, "b/sa/gpt");
  EXPECT_DOUBLE_EQ(run.report.per_baseline.at("llava").win_rate, 1.0);
  EXPECT_DOUBLE_EQ(run.report.per_baseline.at("gpt").win_rate, 1.0);
  // judge saw the simulated needs
  EXPECT_EQ(judge->seen[0].system_prompt, "The human needs stated in natural language: The one on the left.");
  // scenario card reached the simulator for the first pair only
  EXPECT_NE(sim->seen[0].user_prompt.find("shopping for a shirt"), std::string::npos);
  EXPECT_EQ(sim->seen[1].user_prompt.find("Scenario"), std::string::npos);

  auto dir = std::filesystem::temp_directory_path() / ("engage_mt_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  write_win_rate_csv(dir / "win_rate.csv", run.report);
  auto rows = csv::parse(io::read_text(dir / "win_rate.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][1], "gpt");
  EXPECT_EQ(rows[1][6], "1.000000");
  std::filesystem::remove_all(dir);
}

TEST(Harness, RejectsSubjectAsBaseline) {
  Gateway g(fn_backend([](const CompletionRequest&) { return "x"; }), 1);
  HarnessInput in;
  in.subject_id = "m";
  in.pairs = {mt_pair("a/sa")};
  in.baselines["m"] = {};
  EXPECT_THROW(run_harness(in, g, g, g), Error);
}

}  // namespace
}  // namespace engage::multiturn
