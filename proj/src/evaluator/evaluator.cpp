#include "engage/evaluator.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>

#include "engage/assets.hpp"
#include "engage/csv.hpp"
#include "engage/parallel.hpp"
#include "engage/random.hpp"
#include "engage/text.hpp"

namespace engage::evaluator {

std::string_view to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::clean: return "clean";
    case ParseStatus::coerced: return "coerced";
    case ParseStatus::failed: return "failed";
  }
  return "failed";
}

ParseStatus parse_parse_status(std::string_view s) {
  for (auto v : {ParseStatus::clean, ParseStatus::coerced, ParseStatus::failed}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorKind::ValidationError, "unknown parse status '" + std::string(s) + "'");
}

void JudgmentRecord::validate() const {
  if (pair_id.empty()) throw Error(ErrorKind::ValidationError, "judgment without pair_id");
  if (!verdict_legal_for(verdict, qtype)) {
    throw Error(ErrorKind::IllegalVerdict, pair_id + ": Partial is not legal for " + std::string(code(qtype)));
  }
  if (parse_status == ParseStatus::failed && verdict != Verdict::Misaligned) {
    throw Error(ErrorKind::ValidationError, pair_id + ": failed judgments must score Misaligned");
  }
}

void to_json(json& j, const JudgmentRecord& r) {
  j = json{{"pair_id", r.pair_id},
           {"model_id", r.model_id},
           {"qtype", std::string(code(r.qtype))},
           {"response", r.response},
           {"verdict", to_string(r.verdict)},
           {"raw_judge_output", r.raw_judge_output},
           {"parse_status", to_string(r.parse_status)}};
}

void from_json(const json& j, JudgmentRecord& r) {
  check_schema_version(j);
  r.pair_id = require_string(j, "pair_id");
  r.model_id = j.value("model_id", "");
  r.qtype = parse_question_type(require_string(j, "qtype"));
  r.response = j.value("response", "");
  r.verdict = parse_verdict(require_string(j, "verdict"));
  r.raw_judge_output = j.value("raw_judge_output", "");
  r.parse_status = parse_parse_status(require_string(j, "parse_status"));
  r.validate();
}

namespace {

constexpr std::array<std::pair<const char*, Verdict>, 3> kLabels = {
    {{"true", Verdict::Aligned}, {"ambiguous", Verdict::Partial}, {"false", Verdict::Misaligned}}};

std::string label_core(std::string_view s) {
  auto t = text::to_lower(text::trim(s));
  const auto junk = [](char c) { return c == '.' || c == '*' || c == '"' || c == '\'' || c == '`' || c == ' '; };
  while (!t.empty() && junk(t.back())) t.pop_back();
  std::size_t b = 0;
  while (b < t.size() && junk(t[b])) ++b;
  return t.substr(b);
}

gateway::CompletionRequest base_request(const ImageQuestionPair& pair, const std::string& response,
                                        const ImageIndex& images, const gateway::Decoding& decoding) {
  gateway::CompletionRequest req;
  req.system_prompt = assets::get("judge_" + text::to_lower(code(pair.qtype)));
  req.user_prompt = text::fill_template(assets::get("judge_input"), {{"Question", pair.question}, {"Response", response}});
  auto it = images.find(pair.image_id);
  req.image = it != images.end() ? it->second : ImageRecord{pair.image_id, "", ""};
  req.decoding = decoding;
  return req;
}

JudgmentRecord failed_record(const ImageQuestionPair& pair, const std::string& response, const std::string& model_id,
                             std::string raw) {
  return JudgmentRecord{pair.id, model_id, pair.qtype, response, Verdict::Misaligned, std::move(raw),
                        ParseStatus::failed};
}

}  // namespace

ParsedJudgment parse_judge_output(std::string_view output, QuestionType qtype) {
  std::size_t best = std::string_view::npos;
  Verdict found = Verdict::Misaligned;
  for (const auto& [word, verdict] : kLabels) {
    const auto pos = text::find_word(output, word);
    if (pos < best) {
      best = pos;
      found = verdict;
    }
  }
  ParsedJudgment out;
  if (best == std::string_view::npos || !verdict_legal_for(found, qtype)) return out;
  out.verdict = found;
  const auto core = label_core(output);
  out.exact = std::any_of(kLabels.begin(), kLabels.end(), [&](const auto& l) { return core == l.first; });
  return out;
}

gateway::CompletionRequest judge_request(const ImageQuestionPair& pair, const std::string& response,
                                         const ImageIndex& images, const gateway::Decoding& decoding) {
  return base_request(pair, response, images, decoding);
}

gateway::CompletionRequest judge_reprompt(const ImageQuestionPair& pair, const std::string& response,
                                          const ImageIndex& images, const gateway::Decoding& decoding) {
  auto req = base_request(pair, response, images, decoding);
  const bool ternary = tier_of(pair.qtype) == Tier::II;
  req.user_prompt += "\n\n" + assets::get(ternary ? "judge_constrained_ternary" : "judge_constrained_binary");
  return req;
}

JudgmentRecord judge(const ImageQuestionPair& pair, const std::string& response, const std::string& model_id,
                     gateway::Gateway& judge_gw, const ImageIndex& images, const gateway::Decoding& decoding) {
  std::string first;
  try {
    first = judge_gw.complete(judge_request(pair, response, images, decoding));
  } catch (const Error& e) {
    return failed_record(pair, response, model_id, std::string("judge error: ") + e.what());
  }
  const auto p1 = parse_judge_output(first, pair.qtype);
  if (p1.verdict) {
    return JudgmentRecord{pair.id, model_id, pair.qtype, response, *p1.verdict, first,
                          p1.exact ? ParseStatus::clean : ParseStatus::coerced};
  }
  std::string second;
  try {
    second = judge_gw.complete(judge_reprompt(pair, response, images, decoding));
  } catch (const Error& e) {
    return failed_record(pair, response, model_id, first + "\n[reprompt]\njudge error: " + e.what());
  }
  const auto raw = first + "\n[reprompt]\n" + second;
  const auto p2 = parse_judge_output(second, pair.qtype);
  if (p2.verdict) return JudgmentRecord{pair.id, model_id, pair.qtype, response, *p2.verdict, raw, ParseStatus::coerced};
  return failed_record(pair, response, model_id, raw);
}

// ---------------------------------------------------------------------------

gateway::CompletionRequest response_request(const ImageQuestionPair& pair, const ImageIndex& images,
                                            std::size_t max_tokens) {
  gateway::CompletionRequest req;
  req.user_prompt = pair.question;
  auto it = images.find(pair.image_id);
  req.image = it != images.end() ? it->second : ImageRecord{pair.image_id, "", ""};
  req.decoding.temperature = 0.0;
  req.decoding.max_tokens = max_tokens;
  return req;
}

GatewayModel::GatewayModel(std::string id, gateway::Gateway& gw, ImageIndex images, std::size_t max_tokens)
    : id_(std::move(id)), gw_(gw), images_(std::move(images)), max_tokens_(max_tokens) {}

std::string GatewayModel::respond(const ImageQuestionPair& pair) {
  return gw_.complete(response_request(pair, images_, max_tokens_));
}

TrainedModel::TrainedModel(std::string id, const trainer::TrainableModel& model, trainer::InferOptions opts)
    : id_(std::move(id)), model_(model), opts_(opts) {}

std::string TrainedModel::respond(const ImageQuestionPair& pair) {
  return trainer::infer(model_, pair.question, pair.image_id, opts_);
}

EvaluationReport compute_report(const std::string& model_id, std::vector<JudgmentRecord> judgments) {
  std::sort(judgments.begin(), judgments.end(), [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
  std::map<QuestionType, std::vector<std::pair<Verdict, QuestionType>>> all, parsed;
  EvaluationReport report;
  report.model_id = model_id;
  for (const auto& j : judgments) {
    j.validate();
    all[j.qtype].emplace_back(j.verdict, j.qtype);
    if (j.parse_status == ParseStatus::failed) {
      ++report.parse_failures[j.qtype];
    } else {
      parsed[j.qtype].emplace_back(j.verdict, j.qtype);
    }
  }
  std::map<QuestionType, double> per_type_ar;
  for (const auto& [t, js] : all) {
    const double ar = align_rate(js, t);
    report.per_type[t] = TypeScore{ar, js.size()};
    per_type_ar[t] = ar;
    report.parse_failures.try_emplace(t, 0);
    if (auto it = parsed.find(t); it != parsed.end()) report.ar_over_parsed[t] = align_rate(it->second, t);
  }
  const auto tiers = aggregate_present_types(per_type_ar);
  report.per_tier = tiers.per_tier;
  report.aar = tiers.aar;
  return report;
}

EvaluationRun evaluate_model(ModelUnderTest& model, const std::vector<ImageQuestionPair>& benchmark,
                             gateway::Gateway& judge_gw, const EvaluationOptions& opts) {
  if (benchmark.empty()) throw Error(ErrorKind::EmptyInput, "benchmark is empty");
  std::set<Tier> tiers;
  for (const auto& p : benchmark) tiers.insert(tier_of(p.qtype));
  for (auto t : kAllTiers) {
    if (!tiers.count(t)) {
      throw Error(ErrorKind::MissingTierCoverage, "benchmark has no tier " + std::string(to_string(t)) + " pairs");
    }
  }

  struct Outcome {
    JudgmentRecord record;
    std::optional<ItemFailure> failure;
  };
  const auto model_id = model.id();
  auto outcomes = parallel_map(benchmark.size(), opts.workers, [&](std::size_t i) {
    const auto& pair = benchmark[i];
    Outcome o;
    std::string response;
    try {
      response = model.respond(pair);
    } catch (const Error& e) {
      o.failure = ItemFailure{pair.id, e.kind(), e.detail()};
      o.record = failed_record(pair, "", model_id, std::string("model error: ") + e.what());
      return o;
    }
    o.record = judge(pair, response, model_id, judge_gw, opts.images, opts.judge_decoding);
    return o;
  });

  EvaluationRun run;
  for (auto& o : outcomes) {
    run.judgments.push_back(std::move(o.record));
    if (o.failure) run.failures.push_back(std::move(*o.failure));
  }
  std::sort(run.judgments.begin(), run.judgments.end(), [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
  std::sort(run.failures.begin(), run.failures.end(), [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
  run.report = compute_report(model_id, run.judgments);
  return run;
}

// ---------------------------------------------------------------------------

std::vector<JudgmentRecord> sample_for_validation(const std::vector<JudgmentRecord>& judgments, std::size_t n,
                                                  std::uint64_t seed) {
  if (n > judgments.size()) {
    throw Error(ErrorKind::SampleTooLarge,
                "asked for " + std::to_string(n) + " of " + std::to_string(judgments.size()) + " judgments");
  }
  const auto perm = seeded_permutation(judgments.size(), seed);
  std::vector<JudgmentRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(judgments[perm[i]]);
  return out;
}

void write_worksheet(const std::filesystem::path& path, const std::vector<JudgmentRecord>& sample,
                     const std::vector<ImageQuestionPair>& pairs) {
  std::map<std::string, const ImageQuestionPair*> by_id;
  for (const auto& p : pairs) by_id[p.id] = &p;
  std::string out = csv::format_row(
      {"pair_id", "model_id", "qtype", "question", "response", "verdict", "parse_status", "human_agrees"});
  for (const auto& j : sample) {
    auto it = by_id.find(j.pair_id);
    out += csv::format_row({j.pair_id, j.model_id, std::string(code(j.qtype)),
                            it != by_id.end() ? it->second->question : "", j.response,
                            std::string(to_string(j.verdict)), std::string(to_string(j.parse_status)), ""});
  }
  io::write_text(path, out);
}

ValidationResult ingest_worksheet(const std::filesystem::path& path) {
  const auto rows = csv::parse(io::read_text(path));
  if (rows.empty()) throw Error(ErrorKind::ValidationError, path.filename().string() + " is empty");
  const auto& header = rows.front();
  const auto col = std::find(header.begin(), header.end(), "human_agrees");
  if (col == header.end()) throw Error(ErrorKind::ValidationError, "worksheet lacks a human_agrees column");
  const auto k = static_cast<std::size_t>(col - header.begin());

  ValidationResult res;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto v = rows[r].size() > k ? text::to_lower(text::trim(rows[r][k])) : std::string();
    bool agrees;
    if (v == "yes" || v == "y" || v == "true" || v == "1") {
      agrees = true;
    } else if (v == "no" || v == "n" || v == "false" || v == "0") {
      agrees = false;
    } else {
      throw Error(ErrorKind::ValidationError,
                  path.filename().string() + " row " + std::to_string(r + 1) + ": human_agrees is '" + v + "'");
    }
    ++res.rows;
    res.agreements += agrees ? 1 : 0;
  }
  if (res.rows == 0) throw Error(ErrorKind::ValidationError, "worksheet has no rows");
  res.accuracy = static_cast<double>(res.agreements) / static_cast<double>(res.rows);
  return res;
}

// ---------------------------------------------------------------------------

void SweepConfig::validate() const {
  if (ratios.empty()) throw Error(ErrorKind::ConfigInvalid, "sweep needs at least one ratio");
  std::set<double> seen;
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw Error(ErrorKind::ConfigInvalid, "sweep ratios must lie in (0, 1]");
    if (!seen.insert(r).second) throw Error(ErrorKind::ConfigInvalid, "duplicate sweep ratio");
  }
  train.validate();
}

std::vector<SweepCell> run_mixture_sweep(const SweepConfig& cfg, const std::vector<crl::TrainingInstance>& engagement,
                                         const std::vector<crl::TrainingInstance>& general,
                                         const std::vector<ImageQuestionPair>& benchmark,
                                         gateway::Gateway& judge_gw, const ModelFactory& fresh_model,
                                         const EvaluationOptions& opts) {
  cfg.validate();
  std::vector<SweepCell> cells;
  for (double ratio : cfg.ratios) {
    SweepCell cell;
    cell.ratio = ratio;
    try {
      const auto mixed = crl::mix(engagement, general, crl::MixtureConfig{ratio, cfg.seed, {}, {}});
      auto model = fresh_model();
      trainer::train(*model, mixed.instances, cfg.train);
      TrainedModel mut("ratio-" + std::to_string(ratio), *model);
      cell.report = evaluate_model(mut, benchmark, judge_gw, opts).report;
    } catch (const Error& e) {
      cell.failure = ItemFailure{"ratio " + std::to_string(ratio), e.kind(), e.detail()};
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

ModelFactory toy_model_factory(const std::vector<crl::TrainingInstance>& engagement,
                               const std::vector<crl::TrainingInstance>& general, std::uint64_t seed) {
  auto all = engagement;
  all.insert(all.end(), general.begin(), general.end());
  auto vocab = std::make_shared<trainer::Vocabulary>(trainer::Vocabulary::build(all));
  return [vocab, seed] { return std::make_unique<trainer::ToyModel>(*vocab, seed); };
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepCell>& cells) {
  std::vector<std::string> header{"ratio"};
  for (auto t : kAllQuestionTypes) header.emplace_back(code(t));
  for (auto t : kAllTiers) header.push_back("tier_" + std::string(to_string(t)));
  header.insert(header.end(), {"aar", "status"});
  std::string out = csv::format_row(header);
  const auto num = csv::format_number;
  for (const auto& c : cells) {
    std::vector<std::string> row{num(c.ratio)};
    for (auto t : kAllQuestionTypes) {
      const bool have = c.report && c.report->per_type.count(t);
      row.push_back(have ? num(c.report->per_type.at(t).ar) : "");
    }
    for (auto t : kAllTiers) {
      const bool have = c.report && c.report->per_tier.count(t);
      row.push_back(have ? num(c.report->per_tier.at(t)) : "");
    }
    row.push_back(c.report ? num(c.report->aar) : "");
    row.push_back(c.failure ? std::string(engage::to_string(c.failure->kind)) + ": " + c.failure->message : "ok");
    out += csv::format_row(row);
  }
  io::write_text(path, out);
}

}  // namespace engage::evaluator
