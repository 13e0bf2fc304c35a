#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "engage/annotation.hpp"
#include "engage/cli.hpp"
#include "engage/crl.hpp"
#include "engage/csv.hpp"
#include "engage/digest.hpp"
#include "engage/evaluator.hpp"
#include "engage/imagination.hpp"
#include "engage/multiturn.hpp"
#include "engage/question_factory.hpp"
#include "engage/trainer.hpp"

namespace engage::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kRoleNames{"generator", "judge", "simulator", "model"};

struct Globals {
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::map<std::string, std::optional<std::string>> scripts;  // --<role>-script
};

std::string relative_to(const fs::path& p, const fs::path& dir) {
  std::error_code ec;
  auto rel = fs::relative(fs::absolute(p), fs::absolute(dir), ec);
  if (ec || rel.empty()) return fs::absolute(p).lexically_normal().string();
  return rel.generic_string();
}

// Everything one stage invocation needs: resolved config, output directory
// and the manifest under construction.
class Stage {
 public:
  Stage(std::string command, const Globals& g, std::ostream& out) : command_(std::move(command)), g_(g), out_(out) {
    if (g.config) {
      cfg_ = Config::load(*g.config);
      has_config_ = true;
    }
    manifest_ = json{{"schema_version", kSchemaVersion}, {"command", command_}};
    manifest_["config"] = has_config_ ? cfg_.raw : json(nullptr);
    manifest_["inputs"] = json::object();
    manifest_["outputs"] = json::object();
    manifest_["options"] = json::object();
    manifest_["gateways"] = json::object();
  }

  const Config& config() const { return cfg_; }
  std::ostream& out() { return out_; }

  const fs::path& dir() {
    if (dir_.empty()) {
      if (g_.out) {
        dir_ = *g_.out;
      } else if (const json* root = cfg_.find("output_root")) {
        dir_ = fs::path(cfg_.base_dir) / root->get<std::string>() / command_;
      } else {
        throw Error(ErrorKind::ConfigInvalid, "--out: required when the config has no output_root");
      }
      fs::create_directories(dir_);
    }
    return dir_;
  }

  std::uint64_t seed() {
    std::uint64_t s = 0;
    if (g_.seed) {
      s = *g_.seed;
    } else if (const json* j = cfg_.find("seed")) {
      s = j->get<std::uint64_t>();
    }
    manifest_["seed"] = s;
    return s;
  }

  std::size_t workers() {
    std::size_t w = 4;
    if (g_.workers) {
      w = *g_.workers;
    } else if (const json* j = cfg_.find("workers")) {
      w = j->get<std::size_t>();
    }
    if (w == 0) throw Error(ErrorKind::ConfigInvalid, "--workers: must be positive");
    option("workers", w);
    return w;
  }

  questions::Mode mode(const std::optional<std::string>& flag) {
    std::string m = "pie_benchmark";
    if (flag) {
      m = *flag;
    } else if (const json* j = cfg_.find("mode")) {
      m = j->get<std::string>();
    }
    questions::Mode mode;
    try {
      mode = questions::parse_mode(m);
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigInvalid, "--mode: " + e.detail());
    }
    option("mode", m);
    return mode;
  }

  /// Required input: the flag, else the config path, else ConfigInvalid.
  fs::path input(const std::string& name, const std::optional<std::string>& flag, const std::string& cfg_key = {}) {
    auto p = optional_input(name, flag, cfg_key);
    if (!p) {
      throw Error(ErrorKind::ConfigInvalid,
                  "--" + name + ": required" + (cfg_key.empty() ? std::string() : " (or " + cfg_key + " in the config)"));
    }
    return *p;
  }

  std::optional<fs::path> optional_input(const std::string& name, const std::optional<std::string>& flag,
                                         const std::string& cfg_key = {}) {
    std::optional<fs::path> p;
    if (flag) {
      p = fs::path(*flag);
    } else if (!cfg_key.empty()) {
      p = cfg_.path(cfg_key);
    }
    if (!p) return std::nullopt;
    if (!fs::exists(*p)) throw Error(ErrorKind::IoError, "--" + name + ": no such file " + p->string());
    manifest_["inputs"][name] = json{{"path", relative_to(*p, dir())}, {"sha256", sha256_file(*p)}};
    return p;
  }

  std::unique_ptr<gateway::Gateway> gateway(const std::string& role) {
    gateway::BackendConfig bc;
    const auto flag = g_.scripts.count(role) ? g_.scripts.at(role) : std::nullopt;
    if (flag) {
      bc.kind = gateway::BackendKind::scripted_mock;
      bc.script_path = *flag;
      if (!fs::exists(bc.script_path)) {
        throw Error(ErrorKind::IoError, "--" + role + "-script: no such file " + bc.script_path);
      }
    } else if (const json* node = cfg_.find("gateways." + role)) {
      bc = backend_config(*node, role, cfg_.base_dir);
    } else {
      throw Error(ErrorKind::ConfigInvalid,
                  "gateways." + role + ": required (or pass --" + role + "-script for a scripted mock)");
    }
    json rec;
    if (bc.kind == gateway::BackendKind::scripted_mock) {
      rec = json{{"kind", "scripted_mock"},
                 {"script", relative_to(bc.script_path, dir())},
                 {"sha256", sha256_file(bc.script_path)}};
    } else {
      rec = json{{"kind", "remote_api"},
                 {"endpoint", bc.endpoint},
                 {"model", bc.model_name},
                 {"credentials_env", bc.credentials_env},
                 {"concurrency", bc.concurrency_limit}};
    }
    manifest_["gateways"][role] = rec;
    return gateway::Gateway::from_config(bc);
  }

  template <typename T>
  void option(const std::string& key, const T& value) {
    manifest_["options"][key] = value;
  }
  json& manifest() { return manifest_; }

  fs::path output(const std::string& name) {
    auto p = dir() / name;
    outputs_.push_back(name);
    return p;
  }

  void finish() {
    for (const auto& name : outputs_) {
      auto p = dir() / name;
      if (fs::exists(p)) manifest_["outputs"][name] = sha256_file(p);
    }
    io::write_json(dir() / "manifest.json", manifest_);
  }

  template <typename T>
  void write_failures(const std::vector<T>& failures) {
    io::write_records(output("failures.jsonl"), failures);
    if (!failures.empty()) out_ << "  " << failures.size() << " item failure(s) recorded in failures.jsonl\n";
  }

 private:
  std::string command_;
  const Globals& g_;
  std::ostream& out_;
  Config cfg_;
  bool has_config_ = false;
  fs::path dir_;
  json manifest_;
  std::vector<std::string> outputs_;
};

// A stage where every item failed is a runtime error, not a quiet success.
void require_some(std::size_t produced, const std::vector<ItemFailure>& failures, const char* what) {
  if (produced == 0 && !failures.empty()) {
    throw Error(failures.front().kind, std::string("no ") + what + " produced; first failure " +
                                           failures.front().item_id + ": " + failures.front().message);
  }
}

imagination::ImageIndex image_index(Stage& st, const std::optional<std::string>& flag) {
  imagination::ImageIndex idx;
  if (auto p = st.optional_input("images", flag, "paths.images")) {
    for (auto& r : questions::read_image_manifest(*p)) idx.emplace(r.id, r);
  }
  return idx;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> learning_rate;
  std::optional<std::string> loss_scope;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch-size", batch_size, "Minibatch size");
    app->add_option("--learning-rate", learning_rate, "Adam learning rate");
    app->add_option("--loss-scope", loss_scope, "response_only or full_sequence");
  }

  trainer::TrainConfig resolve(Stage& st, std::uint64_t seed, const Globals& g) const {
    trainer::TrainConfig tc;
    const json* node = st.config().find("train");
    if (node) tc = node->get<trainer::TrainConfig>();
    if (g.seed || !node || !node->contains("seed")) tc.seed = seed;
    if (epochs) tc.epochs = *epochs;
    if (batch_size) tc.batch_size = *batch_size;
    if (learning_rate) tc.learning_rate = *learning_rate;
    if (loss_scope) {
      try {
        tc.loss_scope = trainer::parse_loss_scope(*loss_scope);
      } catch (const Error& e) {
        throw Error(ErrorKind::ConfigInvalid, "--loss-scope: " + e.detail());
      }
    }
    try {
      tc.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigInvalid, "train: " + e.detail());
    }
    st.option("train", json(tc));
    return tc;
  }
};

struct GenerateCmd {
  std::optional<std::string> images, mode;
  void add(CLI::App* app) {
    app->add_option("--images", images, "Image manifest (id<TAB>path[<TAB>source])");
    app->add_option("--mode", mode, "pie_benchmark or macaroon_training");
  }
  void run(Stage& st) {
    auto imgs = questions::read_image_manifest(st.input("images", images, "paths.images"));
    questions::GenerationJob job;
    job.mode = st.mode(mode);
    auto gw = st.gateway("generator");
    auto res = questions::run_generation(imgs, *gw, job);
    io::write_records(st.output("candidates.jsonl"), res.candidates);
    if (job.mode == questions::Mode::macaroon_training) io::write_records(st.output("lhp.jsonl"), res.lhp_pairs);
    st.write_failures(res.failures);
    st.finish();
    require_some(res.candidates.size(), res.failures, "candidate sets");
    st.out() << "generate: " << res.candidates.size() << " candidate set(s), " << res.lhp_pairs.size()
             << " LHP pair(s) -> " << st.dir().string() << "\n";
  }
};

struct SelectCmd {
  std::optional<std::string> images, candidates, lhp, mode;
  bool auto_accept = false;
  void add(CLI::App* app) {
    app->add_option("--images", images, "Image manifest");
    app->add_option("--candidates", candidates, "candidates.jsonl from generate")->required();
    app->add_option("--lhp", lhp, "lhp.jsonl from generate, appended to the pairs");
    app->add_option("--mode", mode, "pie_benchmark or macaroon_training");
    app->add_flag("--auto-accept", auto_accept, "Mark every pair accepted, skipping human annotation");
  }
  void run(Stage& st) {
    auto imgs = questions::read_image_manifest(st.input("images", images, "paths.images"));
    auto cands = io::read_records<CandidateQuestionSet>(st.input("candidates", candidates));
    questions::GenerationJob job;
    job.mode = st.mode(mode);
    st.option("auto_accept", auto_accept);
    auto gw = st.gateway("generator");
    auto res = questions::run_selection(imgs, cands, *gw, job);
    auto pairs = res.pairs;
    if (auto p = st.optional_input("lhp", lhp)) {
      auto extra = io::read_records<ImageQuestionPair>(*p);
      pairs.insert(pairs.end(), extra.begin(), extra.end());
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < pairs.size(); ++i) {
      if (pairs[i].id == pairs[i - 1].id) throw Error(ErrorKind::ValidationError, "duplicate pair id " + pairs[i].id);
    }
    if (auto_accept) {
      for (auto& p : pairs)
        if (p.status == PairStatus::candidate) p.accept();
    }
    io::write_records(st.output("pairs.jsonl"), pairs);
    st.write_failures(res.failures);
    st.finish();
    require_some(res.pairs.size(), res.failures, "selected pairs");
    st.out() << "select: " << pairs.size() << " pair(s)" << (auto_accept ? " (auto-accepted)" : "") << " -> "
             << st.dir().string() << "\n";
  }
};

std::atomic<bool> g_stop_requested{false};
extern "C" void on_stop_signal(int) { g_stop_requested = true; }

struct AnnotateServeCmd {
  std::optional<std::string> pairs, images, journal, host, export_path;
  std::optional<int> port;
  std::vector<std::string> annotators;
  void add(CLI::App* app) {
    app->add_option("--pairs", pairs, "pairs.jsonl; candidate pairs are enqueued on a fresh journal");
    app->add_option("--images", images, "Image manifest used to serve image bytes");
    app->add_option("--annotators", annotators, "Annotator ids (at least two)")->delimiter(',');
    app->add_option("--journal", journal, "Append-only decision journal (default <out>/journal.jsonl)");
    app->add_option("--host", host, "Bind address (default 127.0.0.1)");
    app->add_option("--port", port, "Port; 0 picks a free one (default 8080)");
    app->add_option("--export", export_path, "Where POST /api/export writes (default <out>/accepted.jsonl)");
  }
  void run(Stage& st) {
    const auto& cfg = st.config();
    std::vector<std::string> who = annotators;
    if (who.empty()) {
      if (const json* a = cfg.find("annotation.annotators")) who = a->get<std::vector<std::string>>();
    }
    std::string h = host ? *host : (cfg.find("annotation.host") ? cfg.find("annotation.host")->get<std::string>() : "127.0.0.1");
    int p = port ? *port : (cfg.find("annotation.port") ? cfg.find("annotation.port")->get<int>() : 8080);
    fs::path jpath = journal ? fs::path(*journal)
                             : (cfg.path("annotation.journal") ? *cfg.path("annotation.journal") : st.dir() / "journal.jsonl");
    fs::path xpath = export_path ? fs::path(*export_path) : st.dir() / "accepted.jsonl";

    auto idx = image_index(st, images);
    annotation::AnnotationStore store(jpath);
    if (store.assignments().empty()) {
      auto all = io::read_records<ImageQuestionPair>(st.input("pairs", pairs));
      std::vector<ImageQuestionPair> queue;
      for (const auto& q : all)
        if (q.status == PairStatus::candidate) queue.push_back(q);
      store.enqueue(queue, who);
    }
    st.option("annotators", who);
    st.option("host", h);
    st.option("journal", relative_to(jpath, st.dir()));
    st.option("export", relative_to(xpath, st.dir()));

    annotation::AnnotationServer server(store, idx, xpath);
    int bound = server.bind(h, p);
    st.option("port", p);
    io::write_json(st.dir() / "server.json", json{{"host", h}, {"port", bound}});
    st.finish();
    std::size_t pending = 0;
    for (const auto& a : who) pending += store.pending_count(a);
    st.out() << "annotate-serve: " << pending << " pending decision(s); listening on http://" << h << ":"
             << bound << "\n"
             << std::flush;

    g_stop_requested = false;
    auto prev_int = std::signal(SIGINT, on_stop_signal);
    auto prev_term = std::signal(SIGTERM, on_stop_signal);
    std::atomic<bool> done{false};
    std::thread watcher([&] {
      while (!done) {
        if (g_stop_requested) {
          server.stop();
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
    });
    server.listen();
    done = true;
    watcher.join();
    std::signal(SIGINT, prev_int);
    std::signal(SIGTERM, prev_term);
    st.out() << "annotate-serve: stopped\n";
  }
};

struct ImagineCmd {
  std::optional<std::string> pairs, images, mode;
  std::optional<double> max_failure_rate;
  void add(CLI::App* app) {
    app->add_option("--pairs", pairs, "Accepted pairs JSONL")->required();
    app->add_option("--images", images, "Image manifest");
    app->add_option("--mode", mode, "pie_benchmark or macaroon_training");
    app->add_option("--max-failure-rate", max_failure_rate, "Abort above this failed fraction (default 0.1)");
  }
  void run(Stage& st) {
    auto ps = io::read_records<ImageQuestionPair>(st.input("pairs", pairs));
    auto idx = image_index(st, images);
    imagination::ImaginationConfig cfg;
    cfg.mode = st.mode(mode);
    if (max_failure_rate) cfg.max_failure_rate = *max_failure_rate;
    st.option("max_failure_rate", cfg.max_failure_rate);
    auto gw = st.gateway("generator");
    auto res = imagination::build_preference_dataset(ps, *gw, idx, cfg);
    io::write_records(st.output("contrastive.jsonl"), res.pairs);
    st.write_failures(res.failures);
    st.finish();
    st.out() << "imagine: " << res.pairs.size() << " contrastive pair(s) -> " << st.dir().string() << "\n";
  }
};

struct BuildDatasetCmd {
  std::optional<std::string> contrastive, feedback_bank;
  std::string format = "crl";
  void add(CLI::App* app) {
    app->add_option("--contrastive", contrastive, "contrastive.jsonl from imagine")->required();
    app->add_option("--format", format, "crl, sft, multi_turn or dpo")
        ->check(CLI::IsMember({"crl", "sft", "multi_turn", "dpo"}));
    app->add_option("--feedback-bank", feedback_bank, "JSON object: type code -> feedback text (multi_turn)");
  }
  void run(Stage& st) {
    auto pairs = io::read_records<imagination::ContrastivePair>(st.input("contrastive", contrastive));
    st.option("format", format);
    std::size_t n = 0;
    if (format == "dpo") {
      auto recs = crl::to_dpo_export(pairs);
      io::write_records(st.output("dpo.jsonl"), recs);
      n = recs.size();
    } else {
      std::vector<crl::TrainingInstance> inst;
      if (format == "crl") {
        inst = crl::to_crl_instances(pairs);
      } else if (format == "sft") {
        inst = crl::to_sft_only(pairs);
      } else {
        auto bank = crl::default_feedback_bank();
        if (auto p = st.optional_input("feedback-bank", feedback_bank)) {
          bank.clear();
          for (const auto& [k, v] : io::read_json(*p).items()) bank[parse_question_type(k)] = v.get<std::string>();
        }
        inst = crl::to_multi_turn(pairs, bank);
      }
      io::write_records(st.output("instances.jsonl"), inst);
      n = inst.size();
    }
    st.finish();
    st.out() << "build-dataset: " << n << " " << format << " record(s) from " << pairs.size() << " pair(s) -> "
             << st.dir().string() << "\n";
  }
};

struct MixCmd {
  std::optional<std::string> engagement, general;
  std::optional<double> rho;
  void add(CLI::App* app) {
    app->add_option("--engagement", engagement, "Engagement instances JSONL");
    app->add_option("--general", general, "General instruction corpus JSONL");
    app->add_option("--rho", rho, "Fraction of the engagement set to include, in [0, 1]");
  }
  void run(Stage& st) {
    crl::MixtureConfig mc;
    if (auto p = st.optional_input("engagement", engagement, "paths.engagement")) mc.engagement_source = *p;
    mc.general_source = st.input("general", general, "paths.general");
    mc.rho = rho ? *rho : (st.config().find("mix.rho") ? st.config().find("mix.rho")->get<double>() : 1.0);
    mc.seed = st.seed();
    try {
      mc.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigInvalid, "--rho: " + e.detail());
    }
    st.option("rho", mc.rho);
    auto res = crl::mix_files(mc, st.output("mixed.jsonl"));
    st.manifest()["mix"] = res.manifest;
    st.finish();
    st.out() << "mix: " << res.instances.size() << " instance(s) at rho " << mc.rho << " -> " << st.dir().string()
             << "\n";
  }
};

struct TrainCmd {
  std::optional<std::string> data;
  TrainFlags tf;
  void add(CLI::App* app) {
    app->add_option("--data", data, "Training instances JSONL")->required();
    tf.add(app);
  }
  void run(Stage& st, const Globals& g) {
    auto path = st.input("data", data);
    auto tc = tf.resolve(st, st.seed(), g);
    auto inst = io::read_records<crl::TrainingInstance>(path);
    trainer::ToyModel model(trainer::Vocabulary::build(inst), tc.seed);
    auto report = trainer::train(model, inst, tc);
    report.data_digest = sha256_file(path);
    model.save(st.output("model.json"), tc, report.data_digest);
    io::write_json(st.output("train_report.json"), json(report));
    st.finish();
    st.out() << "train: " << report.instances << " instance(s), " << report.epochs.size() << " epoch(s)";
    if (!report.epochs.empty()) {
      st.out() << ", mean loss " << report.initial_loss << " -> " << report.epochs.back().mean_loss;
    }
    st.out() << " -> " << st.dir().string() << "\n";
  }
};

struct EvaluateCmd {
  std::optional<std::string> benchmark, checkpoint, model_id, images;
  void add(CLI::App* app) {
    app->add_option("--benchmark", benchmark, "Accepted pairs JSONL");
    app->add_option("--checkpoint", checkpoint, "Toy model checkpoint; otherwise gateways.model answers");
    app->add_option("--model-id", model_id, "Model id recorded in the judgments");
    app->add_option("--images", images, "Image manifest");
  }
  void run(Stage& st) {
    auto bench = io::read_records<ImageQuestionPair>(st.input("benchmark", benchmark, "paths.benchmark"));
    evaluator::EvaluationOptions opts;
    opts.images = image_index(st, images);
    opts.workers = st.workers();
    std::optional<trainer::ToyModel> toy;
    std::unique_ptr<gateway::Gateway> model_gw;
    std::unique_ptr<evaluator::ModelUnderTest> model;
    if (auto ck = st.optional_input("checkpoint", checkpoint)) {
      toy.emplace(trainer::ToyModel::load(*ck));
      model = std::make_unique<evaluator::TrainedModel>(model_id.value_or("toy"), *toy);
    } else {
      model_gw = st.gateway("model");
      model = std::make_unique<evaluator::GatewayModel>(model_id.value_or("model"), *model_gw, opts.images);
    }
    st.option("model_id", model->id());
    auto judge = st.gateway("judge");
    auto res = evaluator::evaluate_model(*model, bench, *judge, opts);
    io::write_records(st.output("judgments.jsonl"), res.judgments);
    io::write_json(st.output("report.json"), json(res.report));
    st.write_failures(res.failures);
    st.finish();
    st.out() << "evaluate: " << model->id() << " AAR " << std::fixed << std::setprecision(4) << res.report.aar
             << " over " << res.judgments.size() << " pair(s) -> " << st.dir().string() << "\n";
  }
};

struct ValidateJudgeCmd {
  std::optional<std::string> judgments, benchmark, ingest;
  std::size_t sample = 100;
  void add(CLI::App* app) {
    app->add_option("--judgments", judgments, "judgments.jsonl to sample from");
    app->add_option("--benchmark", benchmark, "Pairs JSONL used to fill in questions");
    app->add_option("--sample", sample, "Worksheet rows (default 100)");
    app->add_option("--ingest", ingest, "Completed worksheet CSV to score instead of sampling");
  }
  void run(Stage& st) {
    if (ingest) {
      auto res = evaluator::ingest_worksheet(st.input("ingest", ingest));
      io::write_json(st.output("validation.json"), json{{"schema_version", kSchemaVersion},
                                                        {"rows", res.rows},
                                                        {"agreements", res.agreements},
                                                        {"accuracy", res.accuracy}});
      st.finish();
      st.out() << "validate-judge: " << res.agreements << "/" << res.rows << " agreements, judge accuracy "
               << std::fixed << std::setprecision(4) << res.accuracy << "\n";
      return;
    }
    auto js = io::read_records<evaluator::JudgmentRecord>(st.input("judgments", judgments));
    std::vector<ImageQuestionPair> pairs;
    if (auto p = st.optional_input("benchmark", benchmark, "paths.benchmark"))
      pairs = io::read_records<ImageQuestionPair>(*p);
    st.option("sample", sample);
    auto picked = evaluator::sample_for_validation(js, sample, st.seed());
    io::write_records(st.output("sample.jsonl"), picked);
    evaluator::write_worksheet(st.output("worksheet.csv"), picked, pairs);
    st.finish();
    st.out() << "validate-judge: " << picked.size() << " row(s) sampled into worksheet.csv -> " << st.dir().string()
             << "\n";
  }
};

struct MultiturnCmd {
  std::optional<std::string> benchmark, baselines, scenarios, subject_id, images;
  void add(CLI::App* app) {
    app->add_option("--benchmark", benchmark, "Pairs JSONL");
    app->add_option("--baselines", baselines, "JSON object: baseline id -> {pair id -> response}");
    app->add_option("--scenarios", scenarios, "JSON object: pair id -> scenario card for the user simulator");
    app->add_option("--subject-id", subject_id, "Id of the multi-turn model (default subject)");
    app->add_option("--images", images, "Image manifest");
  }
  void run(Stage& st) {
    multiturn::HarnessInput in;
    in.pairs = io::read_records<ImageQuestionPair>(st.input("benchmark", benchmark, "paths.benchmark"));
    auto bj = io::read_json(st.input("baselines", baselines, "paths.baselines"));
    try {
      in.baselines = bj.get<std::map<std::string, std::map<std::string, std::string>>>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ValidationError, std::string("baselines: ") + e.what());
    }
    if (auto p = st.optional_input("scenarios", scenarios, "paths.scenarios")) {
      try {
        in.scenarios = io::read_json(*p).get<std::map<std::string, std::string>>();
      } catch (const json::exception& e) {
        throw Error(ErrorKind::ValidationError, std::string("scenarios: ") + e.what());
      }
    }
    in.subject_id = subject_id ? *subject_id
                               : (st.config().find("multiturn.subject_id")
                                      ? st.config().find("multiturn.subject_id")->get<std::string>()
                                      : "subject");
    in.images = image_index(st, images);
    st.option("subject_id", in.subject_id);
    auto subject = st.gateway("model");
    auto sim = st.gateway("simulator");
    auto judge = st.gateway("judge");
    auto run = multiturn::run_harness(in, *subject, *sim, *judge);
    io::write_records(st.output("turns.jsonl"), run.turns);
    io::write_records(st.output("comparisons.jsonl"), run.comparisons);
    io::write_json(st.output("win_rate.json"), json(run.report));
    multiturn::write_win_rate_csv(st.output("win_rate.csv"), run.report);
    st.write_failures(run.failures);
    st.finish();
    st.out() << "multiturn: " << run.comparisons.size() << " comparison(s)\n";
    for (const auto& [b, r] : run.report.per_baseline) {
      st.out() << "  vs " << b << ": win " << std::fixed << std::setprecision(3) << r.win_rate << " loss "
               << r.loss_rate << " tie " << r.tie_rate << "\n";
    }
  }
};

struct SweepCmd {
  std::optional<std::string> engagement, general, benchmark;
  std::vector<double> ratios;
  TrainFlags tf;
  void add(CLI::App* app) {
    app->add_option("--engagement", engagement, "Engagement instances JSONL");
    app->add_option("--general", general, "General instruction corpus JSONL");
    app->add_option("--benchmark", benchmark, "Pairs JSONL to evaluate each trained model on");
    app->add_option("--ratios", ratios, "Comma-separated mixture ratios")->delimiter(',');
    tf.add(app);
  }
  void run(Stage& st, const Globals& g) {
    auto eng = io::read_records<crl::TrainingInstance>(st.input("engagement", engagement, "paths.engagement"));
    auto gen = crl::read_general_source(st.input("general", general, "paths.general"));
    auto bench = io::read_records<ImageQuestionPair>(st.input("benchmark", benchmark, "paths.benchmark"));
    evaluator::SweepConfig sc;
    if (!ratios.empty()) {
      sc.ratios = ratios;
    } else if (const json* r = st.config().find("sweep.ratios")) {
      sc.ratios = r->get<std::vector<double>>();
    }
    sc.seed = st.seed();
    sc.train = tf.resolve(st, sc.seed, g);
    try {
      sc.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigInvalid, "--ratios: " + e.detail());
    }
    st.option("ratios", sc.ratios);
    evaluator::EvaluationOptions opts;
    opts.workers = st.workers();
    auto judge = st.gateway("judge");
    auto cells = evaluator::run_mixture_sweep(sc, eng, gen, bench, *judge, evaluator::toy_model_factory(eng, gen, sc.seed),
                                              opts);
    evaluator::write_sweep_csv(st.output("sweep.csv"), cells);
    json arr = json::array();
    for (const auto& c : cells) {
      arr.push_back(json{{"ratio", c.ratio},
                         {"report", c.report ? json(*c.report) : json(nullptr)},
                         {"failure", c.failure ? json(*c.failure) : json(nullptr)}});
    }
    io::write_json(st.output("sweep.json"), json{{"schema_version", kSchemaVersion}, {"cells", arr}});
    st.finish();
    st.out() << "sweep: " << cells.size() << " ratio(s) -> " << st.dir().string() << "\n";
    for (const auto& c : cells) {
      st.out() << "  rho " << std::fixed << std::setprecision(2) << c.ratio << ": ";
      if (c.report) {
        st.out() << "AAR " << std::setprecision(4) << c.report->aar << "\n";
      } else {
        st.out() << "failed (" << c.failure->message << ")\n";
      }
    }
  }
};

struct ReportCmd {
  std::vector<std::string> reports;
  void add(CLI::App* app) { app->add_option("reports", reports, "report.json files from evaluate")->required(); }
  void run(Stage& st) {
    std::vector<EvaluationReport> rs;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      auto p = st.input("report" + std::to_string(i), reports[i]);
      try {
        auto j = io::read_json(p);
        check_schema_version(j);
        rs.push_back(j.get<EvaluationReport>());
      } catch (const json::exception& e) {
        throw Error(ErrorKind::ValidationError, p.string() + ": " + e.what());
      }
    }
    std::vector<std::string> header{"model_id"};
    for (auto t : kAllQuestionTypes) header.emplace_back(code(t));
    for (auto t : kAllTiers) header.push_back("tier_" + std::string(to_string(t)));
    header.emplace_back("aar");
    std::string csv_out = csv::format_row(header);
    std::vector<std::vector<std::string>> rows{header};
    for (const auto& r : rs) {
      std::vector<std::string> row{r.model_id};
      for (auto t : kAllQuestionTypes) row.push_back(r.per_type.count(t) ? csv::format_number(r.per_type.at(t).ar) : "");
      for (auto t : kAllTiers) row.push_back(r.per_tier.count(t) ? csv::format_number(r.per_tier.at(t)) : "");
      row.push_back(csv::format_number(r.aar));
      csv_out += csv::format_row(row);
      rows.push_back(row);
    }
    io::write_text(st.output("reports.csv"), csv_out);
    st.finish();
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& row : rows)
      for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        st.out() << std::left << std::setw(static_cast<int>(width[i])) << row[i] << (i + 1 < row.size() ? "  " : "\n");
      }
    }
  }
};

std::string known_commands() {
  std::string s;
  for (const auto& c : commands()) s += (s.empty() ? "" : ", ") + c;
  return s;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Proactive-engagement data, training and evaluation pipeline", "engage"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON pipeline config; ${VAR} is read from the environment");
  app.add_option("--out", g.out, "Output directory (default <output_root>/<command>)");
  app.add_option("--seed", g.seed, "Seed recorded in the manifest");
  app.add_option("--workers", g.workers, "Concurrent items for evaluation");
  for (const auto& role : kRoleNames) {
    app.add_option("--" + role + "-script", g.scripts[role], "Scripted mock for the " + role + " role");
  }

  GenerateCmd generate;
  SelectCmd select;
  AnnotateServeCmd serve;
  ImagineCmd imagine;
  BuildDatasetCmd build;
  MixCmd mixc;
  TrainCmd trainc;
  EvaluateCmd evaluate;
  ValidateJudgeCmd validate;
  MultiturnCmd multi;
  SweepCmd sweep;
  ReportCmd report;

  generate.add(app.add_subcommand("generate", "Generate candidate questions for each image"));
  select.add(app.add_subcommand("select", "Pick one question per image"));
  serve.add(app.add_subcommand("annotate-serve", "Serve the annotation HTTP API in the foreground"));
  imagine.add(app.add_subcommand("imagine", "Imagine desirable and undesirable responses"));
  build.add(app.add_subcommand("build-dataset", "Turn contrastive pairs into training records"));
  mixc.add(app.add_subcommand("mix", "Mix engagement and general instruction data"));
  trainc.add(app.add_subcommand("train", "Train the toy model with reward-token conditioning"));
  evaluate.add(app.add_subcommand("evaluate", "Answer the benchmark and judge every response"));
  validate.add(app.add_subcommand("validate-judge", "Sample a worksheet or score a completed one"));
  multi.add(app.add_subcommand("multiturn", "Clarify-then-answer dialogue with pairwise comparison"));
  sweep.add(app.add_subcommand("sweep", "Train and evaluate across mixture ratios"));
  report.add(app.add_subcommand("report", "Tabulate evaluation reports"));

  // Unknown commands get their own exit path before CLI11 sees them.
  for (const auto& a : args) {
    if (a.empty() || a[0] == '-') continue;
    if (std::find(commands().begin(), commands().end(), a) == commands().end()) {
      // a value of a global option, e.g. --config file.json
      auto it = std::find(args.begin(), args.end(), a);
      if (it != args.begin() && (*(it - 1)).rfind("--", 0) == 0 && (*(it - 1)).find('=') == std::string::npos) {
        continue;
      }
      err << "UnknownCommand: " << a << " (expected one of " << known_commands() << ")\n";
      return kUsage;
    }
    break;
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    Stage st(name, g, out);
    if (name == "generate") generate.run(st);
    else if (name == "select") select.run(st);
    else if (name == "annotate-serve") serve.run(st);
    else if (name == "imagine") imagine.run(st);
    else if (name == "build-dataset") build.run(st);
    else if (name == "mix") mixc.run(st);
    else if (name == "train") trainc.run(st, g);
    else if (name == "evaluate") evaluate.run(st);
    else if (name == "validate-judge") validate.run(st);
    else if (name == "multiturn") multi.run(st);
    else if (name == "sweep") sweep.run(st, g);
    else if (name == "report") report.run(st);
    else throw Error(ErrorKind::UnknownCommand, name);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "RuntimeError: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace engage::cli
