#include "engage/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "engage/digest.hpp"
#include "engage/text.hpp"

namespace engage::trainer {

std::string_view to_string(LossScope s) { return s == LossScope::response_only ? "response_only" : "full_sequence"; }

LossScope parse_loss_scope(std::string_view s) {
  if (s == "response_only") return LossScope::response_only;
  if (s == "full_sequence") return LossScope::full_sequence;
  throw Error(ErrorKind::ConfigInvalid, "unknown loss scope '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error(ErrorKind::ConfigInvalid, "batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::ConfigInvalid, "learning_rate must be positive");
  }
  if (adapter && (adapter->rank <= 0 || adapter->alpha <= 0 || adapter->dropout < 0.0 || adapter->dropout >= 1.0)) {
    throw Error(ErrorKind::ConfigInvalid, "adapter settings out of range");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},   {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
           {"seed", c.seed},       {"loss_scope", to_string(c.loss_scope)}};
  j["adapter"] = c.adapter ? json{{"rank", c.adapter->rank}, {"alpha", c.adapter->alpha},
                                  {"dropout", c.adapter->dropout}}
                           : json(nullptr);
}

void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.loss_scope = parse_loss_scope(j.value("loss_scope", std::string("response_only")));
  if (j.contains("adapter")) {
    if (j.at("adapter").is_null()) {
      c.adapter.reset();
    } else {
      const auto& a = j.at("adapter");
      c.adapter = AdapterConfig{a.value("rank", 16), a.value("alpha", 16), a.value("dropout", 0.1)};
    }
  }
  c.validate();
}

std::string render_prefix(std::optional<crl::RewardToken> token, const std::string& question) {
  if (!token) return question;
  return std::string(crl::surface(*token)) + " " + question;
}

std::string render_prefix(const crl::TrainingInstance& inst) {
  if (inst.format == crl::InstanceFormat::multi_turn) {
    return inst.question + "\n" + inst.initial_response.value_or("") + "\n" + inst.feedback.value_or("");
  }
  if (inst.format == crl::InstanceFormat::crl && inst.origin == crl::Origin::engagement && !inst.condition) {
    throw Error(ErrorKind::RenderingFailure, inst.id + ": engagement instance without a condition token");
  }
  return render_prefix(inst.condition, inst.question);
}

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (std::ispunct(c)) out.emplace_back(1, ch);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  tokens_ = {"<unk>", "<bos>", "<eos>", "<sep>"};
  for (auto& t : tokens) {
    if (std::find(tokens_.begin(), tokens_.end(), t) == tokens_.end()) tokens_.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<crl::TrainingInstance>& corpus) {
  std::set<std::string> seen;
  for (const auto& word : {"good", "bad"}) seen.insert(word);
  for (const auto& inst : corpus) {
    for (auto& t : tokenize(render_prefix(inst))) seen.insert(std::move(t));
    for (auto& t : tokenize(inst.response)) seen.insert(std::move(t));
  }
  return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::size_t> out;
  for (const auto& t : tokenize(text)) out.push_back(id(t));
  return out;
}

// ---------------------------------------------------------------------------
// Toy model
// ---------------------------------------------------------------------------

ToyModel::ToyModel(Vocabulary vocab)
    : vocab_(std::move(vocab)), n_(vocab_.size()), params_(2 * n_ * n_ + n_, 0.0) {}

ToyModel::ToyModel(Vocabulary vocab, std::uint64_t seed, double scale) : ToyModel(std::move(vocab)) {
  SeededRng rng(seed);
  for (auto& p : params_) p = scale * rng.normal();
}

ToyModel::Encoded ToyModel::encode(const std::string& prefix, const std::string& response) const {
  const auto p = vocab_.encode(prefix);
  const auto r = vocab_.encode(response);
  if (p.empty()) throw Error(ErrorKind::RenderingFailure, "prefix has no tokens");
  if (r.empty()) throw Error(ErrorKind::RenderingFailure, "response has no tokens");
  Encoded e;
  e.seq.reserve(p.size() + r.size() + 3);
  e.seq.push_back(Vocabulary::kBos);
  e.seq.insert(e.seq.end(), p.begin(), p.end());
  e.prefix_end = e.seq.size();
  e.seq.push_back(Vocabulary::kSep);
  e.seq.insert(e.seq.end(), r.begin(), r.end());
  e.seq.push_back(Vocabulary::kEos);
  return e;
}

// Logits for predicting seq[t] from seq[0..t).
void ToyModel::logits_at(const std::vector<std::size_t>& seq, std::size_t t, std::size_t prefix_end,
                         std::vector<double>& out) const {
  out.assign(params_.begin() + 2 * n_ * n_, params_.end());
  const double* u = params_.data() + seq[t - 1] * n_;
  for (std::size_t v = 0; v < n_; ++v) out[v] += u[v];
  const std::size_t bag_end = std::min(t, prefix_end);
  if (bag_end > 1) {
    const double w = 1.0 / static_cast<double>(bag_end - 1);
    for (std::size_t i = 1; i < bag_end; ++i) {
      const double* c = params_.data() + n_ * n_ + seq[i] * n_;
      for (std::size_t v = 0; v < n_; ++v) out[v] += w * c[v];
    }
  }
}

double ToyModel::step(const Encoded& e, LossScope scope, std::span<double>* grad) const {
  const std::size_t first = scope == LossScope::response_only ? e.prefix_end + 1 : 1;
  std::vector<double> logits, prob(n_);
  double nll = 0.0;
  for (std::size_t t = first; t < e.seq.size(); ++t) {
    logits_at(e.seq, t, e.prefix_end, logits);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t v = 0; v < n_; ++v) z += std::exp(logits[v] - m);
    const double lse = m + std::log(z);
    nll += lse - logits[e.seq[t]];
    if (!grad) continue;

    for (std::size_t v = 0; v < n_; ++v) prob[v] = std::exp(logits[v] - lse);
    prob[e.seq[t]] -= 1.0;
    auto& g = *grad;
    double* gu = g.data() + e.seq[t - 1] * n_;
    double* gb = g.data() + 2 * n_ * n_;
    for (std::size_t v = 0; v < n_; ++v) {
      gu[v] += prob[v];
      gb[v] += prob[v];
    }
    const std::size_t bag_end = std::min(t, e.prefix_end);
    if (bag_end > 1) {
      const double w = 1.0 / static_cast<double>(bag_end - 1);
      for (std::size_t i = 1; i < bag_end; ++i) {
        double* gc = g.data() + n_ * n_ + e.seq[i] * n_;
        for (std::size_t v = 0; v < n_; ++v) gc[v] += w * prob[v];
      }
    }
  }
  return nll;
}

double ToyModel::log_prob(const std::string& prefix, const std::string& response, LossScope scope) const {
  return -step(encode(prefix, response), scope, nullptr);
}

double ToyModel::accumulate_gradient(const std::string& prefix, const std::string& response, LossScope scope,
                                     std::span<double> grad) const {
  if (grad.size() != params_.size()) throw Error(ErrorKind::LengthMismatch, "gradient buffer size");
  return step(encode(prefix, response), scope, &grad);
}

std::string ToyModel::decode(const std::string& prefix, std::size_t max_tokens) const {
  const auto p = vocab_.encode(prefix);
  if (p.empty()) throw Error(ErrorKind::RenderingFailure, "prefix has no tokens");
  std::vector<std::size_t> seq{Vocabulary::kBos};
  seq.insert(seq.end(), p.begin(), p.end());
  const std::size_t prefix_end = seq.size();
  seq.push_back(Vocabulary::kSep);

  std::vector<double> logits;
  std::string out;
  for (std::size_t k = 0; k < max_tokens; ++k) {
    seq.push_back(0);  // slot being predicted
    logits_at(seq, seq.size() - 1, prefix_end, logits);
    std::size_t best = Vocabulary::kEos;
    for (std::size_t v = Vocabulary::kSpecials; v < n_; ++v) {
      if (logits[v] > logits[best]) best = v;
    }
    if (best == Vocabulary::kEos) break;
    seq.back() = best;
    if (!out.empty()) out += ' ';
    out += vocab_.token(best);
  }
  return out;
}

void ToyModel::save(const std::filesystem::path& path, const TrainConfig& cfg, const std::string& data_digest) const {
  io::write_json(path, json{{"format", "engage-toy-model"},
                            {"version", 1},
                            {"vocab", vocab_.tokens()},
                            {"params", params_},
                            {"train_config", cfg},
                            {"data_digest", data_digest}});
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
  const auto j = io::read_json(path);
  if (j.value("format", "") != "engage-toy-model" || j.value("version", 0) != 1) {
    throw Error(ErrorKind::ValidationError, path.string() + " is not a version 1 toy checkpoint");
  }
  auto tokens = j.at("vocab").get<std::vector<std::string>>();
  if (tokens.size() < Vocabulary::kSpecials) throw Error(ErrorKind::ValidationError, "checkpoint vocab too small");
  ToyModel m(Vocabulary(std::vector<std::string>(tokens.begin() + Vocabulary::kSpecials, tokens.end())));
  if (m.vocab().tokens() != tokens) throw Error(ErrorKind::ValidationError, "checkpoint vocab malformed");
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != m.params_.size()) throw Error(ErrorKind::ValidationError, "checkpoint parameter count");
  m.params_ = params;
  return m;
}

// ---------------------------------------------------------------------------
// Objective and loop
// ---------------------------------------------------------------------------

double crl_loss(const TrainableModel& model, std::span<const crl::TrainingInstance> batch, LossScope scope) {
  double loss = 0.0;
  for (const auto& inst : batch) loss -= model.log_prob(render_prefix(inst), inst.response, scope);
  return loss;
}

double crl_loss_and_gradient(const TrainableModel& model, std::span<const crl::TrainingInstance> batch,
                             LossScope scope, std::vector<double>& grad) {
  grad.assign(model.parameters().size(), 0.0);
  double loss = 0.0;
  for (const auto& inst : batch) loss += model.accumulate_gradient(render_prefix(inst), inst.response, scope, grad);
  return loss;
}

void to_json(json& j, const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"total_loss", e.total_loss}, {"mean_loss", e.mean_loss},
                      {"batches", e.batches}});
  }
  j = json{{"initial_loss", r.initial_loss}, {"epochs", epochs}, {"instances", r.instances},
           {"data_digest", r.data_digest}};
}

TrainReport train(TrainableModel& model, const std::vector<crl::TrainingInstance>& data, const TrainConfig& cfg) {
  cfg.validate();
  TrainReport report;
  report.instances = data.size();
  report.data_digest = crl::digest_instances(data);
  if (cfg.epochs == 0 || data.empty()) return report;

  report.initial_loss = crl_loss(model, data, cfg.loss_scope) / static_cast<double>(data.size());

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  auto theta = model.parameters();
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0), grad;
  std::vector<crl::TrainingInstance> batch;
  SeededRng rng(cfg.seed);
  std::size_t t = 0;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    seeded_shuffle(order, rng);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(data[order[k]]);
      }
      const double loss = crl_loss_and_gradient(model, batch, cfg.loss_scope, grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::NonFiniteLoss,
                    "epoch " + std::to_string(epoch) + " batch " + std::to_string(stats.batches));
      }
      ++t;
      const double scale = 1.0 / static_cast<double>(batch.size());
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i] * scale;
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
        theta[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
      stats.total_loss += loss;
      ++stats.batches;
    }
    stats.mean_loss = stats.total_loss / static_cast<double>(data.size());
    report.epochs.push_back(stats);
  }
  return report;
}

TrainReport train_file(TrainableModel& model, const std::filesystem::path& path, const TrainConfig& cfg) {
  const auto data = io::read_records<crl::TrainingInstance>(path);
  auto report = train(model, data, cfg);
  report.data_digest = sha256_file(path);
  return report;
}

std::string infer(const TrainableModel& model, const std::string& question, const std::optional<std::string>&,
                  const InferOptions& opts) {
  auto out = model.decode(render_prefix(opts.token, question), opts.max_tokens);
  if (text::trim(out).empty()) throw Error(ErrorKind::DecodeFailure, "model produced an empty response");
  return out;
}

}  // namespace engage::trainer
