#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "engage/crl.hpp"
#include "engage/json_io.hpp"
#include "engage/random.hpp"

namespace engage::trainer {

enum class LossScope { response_only, full_sequence };
std::string_view to_string(LossScope s);
LossScope parse_loss_scope(std::string_view s);

/// Recorded for real-model adapters; the toy model does not use it.
struct AdapterConfig {
  int rank = 16;
  int alpha = 16;
  double dropout = 0.1;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  std::optional<AdapterConfig> adapter = AdapterConfig{};
  LossScope loss_scope = LossScope::response_only;

  void validate() const;
};

void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);

/// What the model sees as conditioning input: the reward token word followed
/// by the question, or the question alone for unconditioned data.
std::string render_prefix(const crl::TrainingInstance& inst);
std::string render_prefix(std::optional<crl::RewardToken> token, const std::string& question);

/// Contract any backing model implements. Text in, text out; tokenisation is
/// the model's business. Failing to encode an input raises RenderingFailure.
class TrainableModel {
 public:
  virtual ~TrainableModel() = default;

  /// Sum of log-probabilities of the scored tokens; finite and <= 0.
  virtual double log_prob(const std::string& prefix, const std::string& response, LossScope scope) const = 0;
  /// Adds d(-log p)/d(theta) into grad and returns -log p.
  virtual double accumulate_gradient(const std::string& prefix, const std::string& response, LossScope scope,
                                     std::span<double> grad) const = 0;
  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  /// Greedy decoding; deterministic.
  virtual std::string decode(const std::string& prefix, std::size_t max_tokens) const = 0;
};

// ---------------------------------------------------------------------------
// Toy model
// ---------------------------------------------------------------------------

/// Lowercased alphanumeric runs and single punctuation marks.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0, kBos = 1, kEos = 2, kSep = 3, kSpecials = 4;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);  // specials first
  static Vocabulary build(const std::vector<crl::TrainingInstance>& corpus);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::size_t> encode(std::string_view text) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

/// Linear-softmax autoregressive scorer. The logit of token v at a step is
///   U[prev][v] + mean over prefix tokens c seen so far of C[c][v] + b[v]
/// so the reward token reaches every response step through the prefix bag.
class ToyModel : public TrainableModel {
 public:
  explicit ToyModel(Vocabulary vocab);
  /// Small Gaussian initial weights from the seed.
  ToyModel(Vocabulary vocab, std::uint64_t seed, double scale = 0.1);

  const Vocabulary& vocab() const { return vocab_; }

  double log_prob(const std::string& prefix, const std::string& response, LossScope scope) const override;
  double accumulate_gradient(const std::string& prefix, const std::string& response, LossScope scope,
                             std::span<double> grad) const override;
  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::string decode(const std::string& prefix, std::size_t max_tokens) const override;

  // Raw access for hand-set tests.
  double& transition(std::size_t prev, std::size_t v) { return params_[prev * n_ + v]; }
  double& context(std::size_t c, std::size_t v) { return params_[n_ * n_ + c * n_ + v]; }
  double& bias(std::size_t v) { return params_[2 * n_ * n_ + v]; }

  void save(const std::filesystem::path& path, const TrainConfig& cfg, const std::string& data_digest) const;
  static ToyModel load(const std::filesystem::path& path);

 private:
  struct Encoded {
    std::vector<std::size_t> seq;  // <bos> prefix <sep> response <eos>
    std::size_t prefix_end = 0;    // index of <sep>
  };
  Encoded encode(const std::string& prefix, const std::string& response) const;
  void logits_at(const std::vector<std::size_t>& seq, std::size_t t, std::size_t prefix_end,
                 std::vector<double>& out) const;
  double step(const Encoded& e, LossScope scope, std::span<double>* grad) const;

  Vocabulary vocab_;
  std::size_t n_;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Objective and loop
// ---------------------------------------------------------------------------

/// Negative sum of response log-probabilities over the batch.
double crl_loss(const TrainableModel& model, std::span<const crl::TrainingInstance> batch,
                LossScope scope = LossScope::response_only);

/// Loss plus its gradient (sum convention), written into grad.
double crl_loss_and_gradient(const TrainableModel& model, std::span<const crl::TrainingInstance> batch,
                             LossScope scope, std::vector<double>& grad);

struct EpochStats {
  std::size_t epoch = 0;
  double total_loss = 0.0;
  double mean_loss = 0.0;  // per instance
  std::size_t batches = 0;

  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  double initial_loss = 0.0;  // per instance, before any update
  std::vector<EpochStats> epochs;
  std::size_t instances = 0;
  std::string data_digest;

  bool operator==(const TrainReport&) const = default;
};

void to_json(json& j, const TrainReport& r);

/// Seeded minibatch Adam over crl_loss. NonFiniteLoss names the batch.
TrainReport train(TrainableModel& model, const std::vector<crl::TrainingInstance>& data, const TrainConfig& cfg);
/// Reads the crl_dataset JSONL first; schema errors name the line.
TrainReport train_file(TrainableModel& model, const std::filesystem::path& path, const TrainConfig& cfg);

struct InferOptions {
  crl::RewardToken token = crl::RewardToken::good;  // "bad" is a diagnostic override
  std::size_t max_tokens = 32;
};

/// Decodes the response to ("good", question). The image is accepted for
/// interface parity; the toy model is text-only. DecodeFailure on empty output.
std::string infer(const TrainableModel& model, const std::string& question,
                  const std::optional<std::string>& image_id = std::nullopt, const InferOptions& opts = {});

}  // namespace engage::trainer
