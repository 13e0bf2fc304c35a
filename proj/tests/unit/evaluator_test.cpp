#include <gtest/gtest.h>

#include <filesystem>

#include "engage/assets.hpp"
#include "engage/csv.hpp"
#include "engage/text.hpp"
#include "engage/evaluator.hpp"
#include "support/synthetic_corpus.hpp"

namespace engage::evaluator {
namespace {

using gateway::Gateway;
using gateway::ScriptedBackend;

ImageQuestionPair bench_pair(const std::string& id, QuestionType t, const std::string& q = "Is it there?") {
  ImageQuestionPair p;
  p.id = id;
  p.image_id = id.substr(0, id.find('/'));
  p.question = q;
  p.qtype = t;
  p.accept();
  return p;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("engage_ev_" + std::to_string(::getpid())) / name;
  std::filesystem::create_directories(p.parent_path());
  return p;
}

// Model replies and judge outputs both scripted from digests.
struct Scripted {
  std::shared_ptr<ScriptedBackend> model_backend = std::make_shared<ScriptedBackend>();
  std::shared_ptr<ScriptedBackend> judge_backend = std::make_shared<ScriptedBackend>();
  Gateway model_gw{model_backend, 4};
  Gateway judge_gw{judge_backend, 4};

  void script(const ImageQuestionPair& p, const std::string& reply, const std::string& judge_out) {
    model_backend->add(response_request(p), reply);
    judge_backend->add(judge_request(p, reply), judge_out);
  }
};

TEST(ParseJudge, LabelsAndLegality) {
  EXPECT_EQ(parse_judge_output("True", QuestionType::FP).verdict, Verdict::Aligned);
  EXPECT_TRUE(parse_judge_output("True", QuestionType::FP).exact);
  EXPECT_TRUE(parse_judge_output("  **false.** ", QuestionType::FP).exact);
  EXPECT_EQ(parse_judge_output("Ambiguous", QuestionType::SA).verdict, Verdict::Partial);
  EXPECT_FALSE(parse_judge_output("Ambiguous", QuestionType::UQ).verdict.has_value());
  EXPECT_FALSE(parse_judge_output("Ambiguous", QuestionType::LHP).verdict.has_value());
  const auto p = parse_judge_output("I would mark this as FALSE, not true.", QuestionType::UQ);
  EXPECT_EQ(p.verdict, Verdict::Misaligned);
  EXPECT_FALSE(p.exact);
  EXPECT_FALSE(parse_judge_output("untrue statements", QuestionType::FP).verdict.has_value());
  EXPECT_FALSE(parse_judge_output("", QuestionType::FP).verdict.has_value());
}

TEST(Judge, FullPremiseTrueIsAligned) {
  Scripted s;
  const auto p = bench_pair("a/fp", QuestionType::FP);
  s.judge_backend->add(judge_request(p, "It is blue."), "True");
  const auto r = judge(p, "It is blue.", "m", s.judge_gw);
  EXPECT_EQ(r.verdict, Verdict::Aligned);
  EXPECT_EQ(r.parse_status, ParseStatus::clean);
  EXPECT_EQ(r.raw_judge_output, "True");
}

TEST(Judge, SubjectAmbiguityAmbiguousIsPartial) {
  Scripted s;
  const auto p = bench_pair("a/sa", QuestionType::SA);
  s.judge_backend->add(judge_request(p, "r"), "Ambiguous");
  EXPECT_EQ(judge(p, "r", "m", s.judge_gw).verdict, Verdict::Partial);
}

TEST(Judge, IllegalAmbiguousRepromptsThenFails) {
  Scripted s;
  const auto p = bench_pair("a/uq", QuestionType::UQ);
  s.judge_backend->add(judge_request(p, "r"), "Ambiguous");
  s.judge_backend->add(judge_reprompt(p, "r"), "Ambiguous");
  const auto r = judge(p, "r", "m", s.judge_gw);
  EXPECT_EQ(r.verdict, Verdict::Misaligned);
  EXPECT_EQ(r.parse_status, ParseStatus::failed);
  EXPECT_EQ(s.judge_gw.call_count(), 2u);
  EXPECT_NE(judge_reprompt(p, "r").user_prompt.find("exactly one word"), std::string::npos);
}

TEST(Judge, RepromptRecoveryIsCoerced) {
  Scripted s;
  const auto p = bench_pair("a/lhp", QuestionType::LHP);
  s.judge_backend->add(judge_request(p, "r"), "Hard to say.");
  s.judge_backend->add(judge_reprompt(p, "r"), "False");
  const auto r = judge(p, "r", "m", s.judge_gw);
  EXPECT_EQ(r.verdict, Verdict::Misaligned);
  EXPECT_EQ(r.parse_status, ParseStatus::coerced);
  EXPECT_NE(r.raw_judge_output.find("Hard to say."), std::string::npos);
}

TEST(Judge, LongerOutputIsCoerced) {
  Scripted s;
  const auto p = bench_pair("a/si", QuestionType::SI);
  s.judge_backend->add(judge_request(p, "r"), "Verdict: True. The reply asks about taste.");
  const auto r = judge(p, "r", "m", s.judge_gw);
  EXPECT_EQ(r.verdict, Verdict::Aligned);
  EXPECT_EQ(r.parse_status, ParseStatus::coerced);
}

TEST(Judge, PromptsSelectedByType) {
  const auto p = bench_pair("a/uub", QuestionType::UUB, "Is this bigger than my car?");
  const auto req = judge_request(p, "Which car do you drive?");
  EXPECT_EQ(req.system_prompt, assets::get("judge_uub"));
  EXPECT_NE(req.user_prompt.find("Is this bigger than my car?"), std::string::npos);
  EXPECT_NE(req.user_prompt.find("Which car do you drive?"), std::string::npos);
  EXPECT_NE(judge_reprompt(p, "x").user_prompt.find("Ambiguous"), std::string::npos);
  EXPECT_EQ(judge_reprompt(bench_pair("a/fp", QuestionType::FP), "x").user_prompt.find("Ambiguous"),
            std::string::npos);
}

TEST(Evaluate, SixPairsAllTrue) {
  Scripted s;
  std::vector<ImageQuestionPair> bench;
  for (auto t : kAllQuestionTypes) {
    bench.push_back(bench_pair("i" + std::string(code(t)) + "/x", t, "Question for " + std::string(code(t))));
    s.script(bench.back(), "reply " + std::string(code(t)), "True");
  }
  GatewayModel mut("mock-model", s.model_gw);
  const auto run = evaluate_model(mut, bench, s.judge_gw);
  ASSERT_EQ(run.judgments.size(), 6u);
  for (const auto& [t, score] : run.report.per_type) EXPECT_EQ(score.ar, 1.0);
  EXPECT_EQ(run.report.aar, 1.0);
  EXPECT_EQ(run.report.model_id, "mock-model");
}

TEST(Evaluate, TableOneLlavaRow) {
  // Per-type ARs of the LLaVA row; AAR oracle is the two-level mean
  // ((0.52 + 0.69) / 2 + (0.43 + 0.03 + 0.14) / 3 + 0.03) / 3.
  const std::map<QuestionType, int> trues = {{QuestionType::FP, 52}, {QuestionType::UQ, 69},
                                             {QuestionType::UUB, 43}, {QuestionType::SA, 3},
                                             {QuestionType::SI, 14}, {QuestionType::LHP, 3}};
  Scripted s;
  std::vector<ImageQuestionPair> bench;
  for (const auto& [t, n] : trues) {
    for (int i = 0; i < 100; ++i) {
      bench.push_back(bench_pair("im" + std::to_string(i) + "/" + std::string(code(t)), t, "q" + std::to_string(i)));
      s.script(bench.back(), "answer " + std::to_string(i), i < n ? "True" : "False");
    }
  }
  GatewayModel mut("llava-like", s.model_gw);
  const auto run = evaluate_model(mut, bench, s.judge_gw);
  const double oracle = ((0.52 + 0.69) / 2 + (0.43 + 0.03 + 0.14) / 3 + 0.03) / 3;
  EXPECT_NEAR(run.report.aar, oracle, 1e-12);
  EXPECT_NEAR(run.report.aar, 0.28, 0.005);
  std::size_t total = 0;
  for (const auto& [t, sc] : run.report.per_type) total += sc.total;
  EXPECT_EQ(total, bench.size());
}

TEST(Evaluate, MissingTierThree) {
  Scripted s;
  std::vector<ImageQuestionPair> bench = {bench_pair("a/fp", QuestionType::FP), bench_pair("b/sa", QuestionType::SA)};
  GatewayModel mut("m", s.model_gw);
  try {
    evaluate_model(mut, bench, s.judge_gw);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingTierCoverage);
  }
}

TEST(Evaluate, FailuresVisibleAndRecomputable) {
  Scripted s;
  std::vector<ImageQuestionPair> bench;
  for (auto t : kAllQuestionTypes) bench.push_back(bench_pair("x" + std::string(code(t)) + "/q", t));
  s.script(bench[0], "r0", "True");                   // FP clean
  s.script(bench[1], "r1", "Ambiguous");              // UQ illegal -> reprompt
  s.judge_backend->add(judge_reprompt(bench[1], "r1"), "no idea");
  s.script(bench[2], "r2", "Ambiguous");              // SA partial
  s.script(bench[3], "r3", "True");
  s.model_backend->add(response_request(bench[4]), "r4");  // UUB: judge unscripted
  // LHP: model unscripted
  GatewayModel mut("m", s.model_gw);
  const auto run = evaluate_model(mut, bench, s.judge_gw);
  ASSERT_EQ(run.judgments.size(), 6u);
  ASSERT_EQ(run.failures.size(), 1u);
  EXPECT_EQ(run.failures[0].item_id, bench[5].id);
  EXPECT_EQ(run.report.parse_failures.at(QuestionType::UQ), 1u);
  EXPECT_EQ(run.report.parse_failures.at(QuestionType::UUB), 1u);
  EXPECT_EQ(run.report.parse_failures.at(QuestionType::LHP), 1u);
  EXPECT_EQ(run.report.parse_failures.at(QuestionType::FP), 0u);
  EXPECT_EQ(run.report.per_type.at(QuestionType::SA).ar, 0.5);
  EXPECT_EQ(run.report.ar_over_parsed.count(QuestionType::UQ), 0u);

  const auto path = scratch("judgments.jsonl");
  io::write_records(path, run.judgments);
  const auto again = compute_report("m", io::read_records<JudgmentRecord>(path));
  EXPECT_EQ(again, run.report);
  EXPECT_EQ(json(again).dump(), json(run.report).dump());
}

TEST(Evaluate, DeterministicWithMock) {
  std::string first;
  for (int k = 0; k < 2; ++k) {
    Scripted s;
    std::vector<ImageQuestionPair> bench;
    for (int i = 0; i < 30; ++i) {
      const auto t = kAllQuestionTypes[i % 6];
      bench.push_back(bench_pair("d" + std::to_string(i) + "/q", t, "q" + std::to_string(i)));
      s.script(bench.back(), "r" + std::to_string(i), i % 3 ? "True" : "False");
    }
    GatewayModel mut("m", s.model_gw);
    std::string dump;
    for (const auto& j : evaluate_model(mut, bench, s.judge_gw).judgments) dump += json(j).dump() + "\n";
    if (k == 0) first = dump;
    else EXPECT_EQ(dump, first);
  }
}

std::vector<JudgmentRecord> many_judgments(std::size_t n) {
  std::vector<JudgmentRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"j" + std::to_string(i) + "/fp", "m", QuestionType::FP, "resp, with \"quotes\"\nline",
                   i % 2 ? Verdict::Aligned : Verdict::Misaligned, "True", ParseStatus::clean});
  }
  return out;
}

TEST(Validation, ReproducibleSample) {
  const auto js = many_judgments(853);
  const auto a = sample_for_validation(js, 100, 2024);
  const auto b = sample_for_validation(js, 100, 2024);
  ASSERT_EQ(a.size(), 100u);
  EXPECT_EQ(a, b);
  std::set<std::string> ids;
  for (const auto& j : a) ids.insert(j.pair_id);
  EXPECT_EQ(ids.size(), 100u);
  EXPECT_NE(sample_for_validation(js, 100, 7), a);
}

TEST(Validation, FullSetAndTooLarge) {
  const auto js = many_judgments(20);
  const auto all = sample_for_validation(js, 20, 1);
  EXPECT_EQ(all.size(), 20u);
  std::set<std::string> ids;
  for (const auto& j : all) ids.insert(j.pair_id);
  EXPECT_EQ(ids.size(), 20u);
  try {
    sample_for_validation(js, 21, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SampleTooLarge);
  }
}

TEST(Validation, WorksheetIngest) {
  const auto sample = sample_for_validation(many_judgments(853), 100, 3);
  const auto path = scratch("worksheet.csv");
  write_worksheet(path, sample);
  auto rows = csv::parse(io::read_text(path));
  ASSERT_EQ(rows.size(), 101u);
  EXPECT_EQ(rows[0].back(), "human_agrees");
  EXPECT_EQ(rows[1][4], "resp, with \"quotes\"\nline");
  EXPECT_THROW(ingest_worksheet(path), Error) << "blank column must not ingest";

  std::string filled = csv::format_row(rows[0]);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    rows[r].back() = r <= 91 ? "yes" : "no";
    filled += csv::format_row(rows[r]);
  }
  io::write_text(path, filled);
  const auto res = ingest_worksheet(path);
  EXPECT_EQ(res.rows, 100u);
  EXPECT_EQ(res.agreements, 91u);
  EXPECT_DOUBLE_EQ(res.accuracy, 0.91);
}

// Judges by the reply class of the synthetic corpus.
class RuleJudge : public gateway::Backend {
 public:
  std::string complete(const gateway::CompletionRequest& req) override {
    const auto pos = req.user_prompt.find("Model reply: ");
    const auto reply = req.user_prompt.substr(pos + 13);
    return testing::classify_response(text::trim(reply)) == testing::ResponseClass::desirable ? "True" : "False";
  }
};

std::vector<ImageQuestionPair> synthetic_benchmark() {
  std::vector<ImageQuestionPair> out;
  const auto qs = testing::synthetic_questions(true);
  for (std::size_t i = 0; i < qs.size(); ++i) {
    out.push_back(bench_pair("h" + std::to_string(i) + "/q", kAllQuestionTypes[i % 6], qs[i].text));
  }
  return out;
}

std::vector<crl::TrainingInstance> general_data(std::size_t n) {
  std::vector<crl::TrainingInstance> out;
  const auto& subj = testing::synthetic_subjects();
  for (std::size_t i = 0; i < n; ++i) {
    crl::TrainingInstance t;
    t.id = "gen" + std::to_string(i);
    t.question = "describe the " + subj[i % subj.size()];
    t.response = "a " + subj[i % subj.size()] + " outside .";
    t.origin = crl::Origin::general;
    out.push_back(t);
  }
  return out;
}

TEST(Sweep, MonotoneOnSyntheticCorpus) {
  const auto eng = testing::synthetic_corpus(300);
  const auto gen = general_data(200);
  Gateway judge_gw(std::make_shared<RuleJudge>(), 4);
  SweepConfig cfg;
  cfg.ratios = {0.2, 1.0};
  cfg.seed = 3;
  cfg.train.epochs = 6;
  const auto cells = run_mixture_sweep(cfg, eng, gen, synthetic_benchmark(), judge_gw, toy_model_factory(eng, gen, 5));
  ASSERT_EQ(cells.size(), 2u);
  ASSERT_TRUE(cells[0].report && cells[1].report);
  EXPECT_LE(cells[0].report->aar, cells[1].report->aar);
  EXPECT_EQ(cells[1].report->per_type.size(), 6u);

  const auto path = scratch("sweep.csv");
  write_sweep_csv(path, cells);
  const auto rows = csv::parse(io::read_text(path));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].size(), 12u);
  EXPECT_EQ(rows[1].back(), "ok");
}

TEST(Sweep, SingleRatioMatchesPlainRun) {
  const auto eng = testing::synthetic_corpus(100);
  const auto gen = general_data(50);
  Gateway judge_gw(std::make_shared<RuleJudge>(), 2);
  SweepConfig cfg;
  cfg.ratios = {1.0};
  cfg.seed = 8;
  cfg.train.epochs = 3;
  const auto factory = toy_model_factory(eng, gen, 2);
  const auto cells = run_mixture_sweep(cfg, eng, gen, synthetic_benchmark(), judge_gw, factory);
  ASSERT_EQ(cells.size(), 1u);

  auto model = factory();
  trainer::train(*model, crl::mix(eng, gen, {1.0, 8, {}, {}}).instances, cfg.train);
  TrainedModel mut("ratio-" + std::to_string(1.0), *model);
  const auto plain = evaluate_model(mut, synthetic_benchmark(), judge_gw).report;
  EXPECT_EQ(*cells[0].report, plain);
}

TEST(Sweep, ConfigValidation) {
  SweepConfig cfg;
  EXPECT_EQ(cfg.ratios, (std::vector<double>{0.2, 0.4, 0.6, 0.8, 1.0}));
  cfg.ratios = {0.0};
  EXPECT_THROW(cfg.validate(), Error);
  cfg.ratios = {0.5, 0.5};
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Sweep, FailingRatioDoesNotAbort) {
  Gateway judge_gw(std::make_shared<RuleJudge>(), 2);
  SweepConfig cfg;
  cfg.ratios = {0.5, 1.0};
  cfg.train.epochs = 1;
  const auto gen = general_data(10);
  // Empty engagement source: every ratio fails with SourceEmpty, but both cells are reported.
  const auto cells = run_mixture_sweep(cfg, {}, gen, synthetic_benchmark(), judge_gw, toy_model_factory({}, gen, 1));
  ASSERT_EQ(cells.size(), 2u);
  for (const auto& c : cells) {
    ASSERT_TRUE(c.failure);
    EXPECT_EQ(c.failure->kind, ErrorKind::SourceEmpty);
  }
}

TEST(JudgmentRecord, JsonAndInvariants) {
  JudgmentRecord r{"p/sa", "m", QuestionType::SA, "resp", Verdict::Partial, "Ambiguous", ParseStatus::clean};
  EXPECT_EQ(json(r).get<JudgmentRecord>(), r);
  r.qtype = QuestionType::FP;
  EXPECT_THROW(r.validate(), Error);
  r = {"p/fp", "m", QuestionType::FP, "resp", Verdict::Aligned, "", ParseStatus::failed};
  EXPECT_THROW(r.validate(), Error);
}

}  // namespace
}  // namespace engage::evaluator
