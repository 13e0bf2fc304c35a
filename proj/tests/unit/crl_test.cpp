#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "engage/crl.hpp"
#include "engage/digest.hpp"

namespace engage::crl {
namespace {

using imagination::ContrastivePair;

const ContrastivePair kRunning{"park-7/sa", QuestionType::SA, "Is the man wearing a red shirt?", "park-7",
                               "There are two men in the image, which one you are referring to?",
                               "Yes, the man in the image is wearing a red shirt."};

std::vector<ContrastivePair> synth_pairs(std::size_t n) {
  std::vector<ContrastivePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"p" + std::to_string(i) + "/x", kAllQuestionTypes[i % 6], "q" + std::to_string(i) + "?",
                   "img" + std::to_string(i), "desirable " + std::to_string(i), "undesirable " + std::to_string(i)});
  }
  return out;
}

std::vector<TrainingInstance> synth_general(std::size_t n) {
  std::vector<TrainingInstance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TrainingInstance t;
    t.id = "general/" + std::to_string(i);
    t.question = "describe " + std::to_string(i);
    t.response = "a scene " + std::to_string(i);
    t.origin = Origin::general;
    out.push_back(std::move(t));
  }
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("engage_crl_" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TEST(RewardToken, SurfaceForms) {
  EXPECT_EQ(surface(RewardToken::good), "good");
  EXPECT_EQ(surface(RewardToken::bad), "bad");
  EXPECT_EQ(parse_reward_token("bad"), RewardToken::bad);
  EXPECT_THROW(parse_reward_token("Good"), Error);
}

TEST(ToCrl, RunningExample) {
  auto [good, bad] = to_crl_instances(kRunning);
  EXPECT_EQ(good.condition, RewardToken::good);
  EXPECT_EQ(good.question, kRunning.question);
  EXPECT_EQ(good.response.rfind("There are two men", 0), 0u);
  EXPECT_EQ(bad.condition, RewardToken::bad);
  EXPECT_EQ(bad.response.rfind("Yes, the man", 0), 0u);
  EXPECT_EQ(good.origin, Origin::engagement);
  EXPECT_EQ(good.pair_id, kRunning.pair_id);
  EXPECT_EQ(bad.pair_id, kRunning.pair_id);
  EXPECT_EQ(good.image_id, "park-7");
}

TEST(ToCrl, DoublesCardinality) {
  const auto pairs = synth_pairs(25000);
  const auto inst = to_crl_instances(pairs);
  ASSERT_EQ(inst.size(), 50000u);
  std::map<std::string, int> per_pair;
  for (const auto& t : inst) {
    ++per_pair[t.pair_id];
    EXPECT_TRUE(t.condition.has_value());
  }
  EXPECT_EQ(per_pair.size(), 25000u);
  for (const auto& [id, n] : per_pair) ASSERT_EQ(n, 2) << id;
  EXPECT_TRUE(to_crl_instances(std::vector<ContrastivePair>{}).empty());
}

TEST(Instance, InvariantsEnforced) {
  auto [good, bad] = to_crl_instances(kRunning);
  auto t = good;
  t.condition.reset();
  EXPECT_THROW(t.validate(), Error);
  t = synth_general(1)[0];
  t.condition = RewardToken::good;
  EXPECT_THROW(t.validate(), Error);
  t = good;
  t.feedback = "nope";
  EXPECT_THROW(t.validate(), Error);
}

TEST(Instance, JsonRoundTrip) {
  auto [good, bad] = to_crl_instances(kRunning);
  EXPECT_EQ(json(good).get<TrainingInstance>(), good);
  const auto g = synth_general(1)[0];
  EXPECT_EQ(json(g).get<TrainingInstance>(), g);
  EXPECT_TRUE(json(g).at("condition").is_null());
  const auto mt = to_multi_turn({kRunning}, default_feedback_bank())[0];
  EXPECT_EQ(json(mt).get<TrainingInstance>(), mt);
}

TEST(Quota, MatchesIntegerOracle) {
  // rho = k / 10 exactly as a rational; oracle is integer division.
  for (std::size_t n : {0u, 1u, 7u, 10u, 999u, 50000u, 123457u}) {
    for (int k = 0; k <= 10; ++k) {
      const double rho = k / 10.0;
      EXPECT_EQ(engagement_quota(rho, n), (static_cast<std::size_t>(k) * n) / 10) << "k=" << k << " n=" << n;
    }
  }
}

TEST(Mix, FullScaleCounts) {
  const auto eng = to_crl_instances(synth_pairs(25000));
  const auto gen = synth_general(75000);
  MixtureConfig cfg;
  cfg.seed = 11;
  cfg.rho = 1.0;
  EXPECT_EQ(mix(eng, gen, cfg).instances.size(), 125000u);
  cfg.rho = 0.2;
  const auto r = mix(eng, gen, cfg);
  EXPECT_EQ(r.instances.size(), 85000u);
  EXPECT_EQ(r.manifest["counts"]["engagement_selected"], 10000);
  EXPECT_EQ(r.manifest["counts"]["general"], 75000);
}

TEST(Mix, SampleIsWithoutReplacementAndGeneralKept) {
  const auto eng = to_crl_instances(synth_pairs(500));
  const auto gen = synth_general(300);
  for (double rho : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
    MixtureConfig cfg{rho, 5, {}, {}};
    const auto r = mix(eng, gen, cfg);
    std::set<std::string> ids;
    std::size_t e = 0, g = 0;
    for (const auto& t : r.instances) {
      EXPECT_TRUE(ids.insert(t.id).second) << "duplicate " << t.id;
      (t.origin == Origin::engagement ? e : g)++;
      EXPECT_FALSE(t.origin == Origin::general && t.condition.has_value());
    }
    EXPECT_EQ(e, engagement_quota(rho, eng.size()));
    EXPECT_EQ(g, gen.size());
  }
}

TEST(Mix, RhoZeroIsShuffledGeneral) {
  const auto gen = synth_general(200);
  const auto r = mix({}, gen, MixtureConfig{0.0, 3, {}, {}});
  ASSERT_EQ(r.instances.size(), 200u);
  auto sorted = r.instances;
  std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.id < b.id; });
  auto expect = gen;
  std::sort(expect.begin(), expect.end(), [](auto& a, auto& b) { return a.id < b.id; });
  EXPECT_EQ(sorted, expect);
  EXPECT_NE(r.instances, gen) << "order should be shuffled";
}

TEST(Mix, ErrorsAndDeterminism) {
  const auto gen = synth_general(10);
  try {
    mix({}, gen, MixtureConfig{0.5, 1, {}, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SourceEmpty);
  }
  EXPECT_THROW(mix({}, gen, MixtureConfig{1.5, 1, {}, {}}), Error);
  const auto eng = to_crl_instances(synth_pairs(40));
  EXPECT_EQ(mix(eng, gen, {0.6, 9, {}, {}}).instances, mix(eng, gen, {0.6, 9, {}, {}}).instances);
  EXPECT_NE(mix(eng, gen, {0.6, 9, {}, {}}).instances, mix(eng, gen, {0.6, 10, {}, {}}).instances);
}

TEST(Mix, FilesAreByteIdenticalAcrossRuns) {
  const auto dir = scratch("files");
  io::write_records(dir / "eng.jsonl", to_crl_instances(synth_pairs(100)));
  std::vector<json> general;
  for (int i = 0; i < 80; ++i) general.push_back({{"question", "q" + std::to_string(i)}, {"response", "r"}});
  io::write_jsonl(dir / "general.jsonl", general);
  MixtureConfig cfg{0.4, 42, dir / "eng.jsonl", dir / "general.jsonl"};
  mix_files(cfg, dir / "a" / "train.jsonl");
  mix_files(cfg, dir / "b" / "train.jsonl");
  EXPECT_EQ(sha256_file(dir / "a" / "train.jsonl"), sha256_file(dir / "b" / "train.jsonl"));
  EXPECT_EQ(io::read_text(dir / "a" / "manifest.json"), io::read_text(dir / "b" / "manifest.json"));
  const auto m = io::read_json(dir / "a" / "manifest.json");
  EXPECT_EQ(m["counts"]["total"], 80 + 80);  // 0.4 of 200 instances
  EXPECT_EQ(m["digests"]["general_file"], sha256_file(dir / "general.jsonl"));
  const auto back = io::read_records<TrainingInstance>(dir / "a" / "train.jsonl");
  EXPECT_EQ(back.size(), 160u);
}

TEST(GeneralSource, BadRecordNamesLine) {
  const auto dir = scratch("general");
  io::write_text(dir / "g.jsonl", "{\"question\":\"a\",\"response\":\"b\"}\n{\"question\":\"a\"}\n");
  try {
    read_general_source(dir / "g.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Ablation, SftOnly) {
  const auto out = to_sft_only(synth_pairs(3));
  ASSERT_EQ(out.size(), 3u);
  for (const auto& t : out) {
    EXPECT_FALSE(t.condition.has_value());
    EXPECT_EQ(t.format, InstanceFormat::sft);
    EXPECT_EQ(t.response.rfind("desirable", 0), 0u);
    EXPECT_NO_THROW(t.validate());
  }
}

TEST(Ablation, MultiTurn) {
  std::vector<ContrastivePair> sa(3, kRunning);
  for (int i = 0; i < 3; ++i) sa[i].pair_id = "s" + std::to_string(i) + "/sa";
  FeedbackBank bank{{QuestionType::SA, "Ask which man I mean."}};
  const auto out = to_multi_turn(sa, bank);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& t : out) {
    EXPECT_EQ(t.feedback, "Ask which man I mean.");
    EXPECT_EQ(t.initial_response, kRunning.r_u);
    EXPECT_EQ(t.response, kRunning.r_d);
  }
  auto mixed = sa;
  mixed.push_back(synth_pairs(1)[0]);  // FP, absent from bank
  try {
    to_multi_turn(mixed, bank);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingFeedback);
  }
  EXPECT_NO_THROW(to_multi_turn(mixed, default_feedback_bank()));
}

TEST(Ablation, DpoExport) {
  const auto out = to_dpo_export({kRunning});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].chosen, kRunning.r_d);
  EXPECT_EQ(out[0].rejected, kRunning.r_u);
  EXPECT_EQ(json(out[0]).get<DpoRecord>(), out[0]);
}

TEST(FeedbackBank, CoversEveryType) {
  const auto bank = default_feedback_bank();
  EXPECT_EQ(bank.size(), 6u);
  for (const auto& [t, f] : bank) EXPECT_FALSE(f.empty());
}

}  // namespace
}  // namespace engage::crl
