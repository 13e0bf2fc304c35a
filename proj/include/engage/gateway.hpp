#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "engage/core.hpp"
#include "engage/error.hpp"

namespace engage::gateway {

struct Decoding {
  double temperature = 0.0;
  std::size_t max_tokens = 1024;
};

struct CompletionRequest {
  std::string system_prompt;
  std::string user_prompt;
  std::optional<ImageRecord> image;
  Decoding decoding;

  void validate() const;
};

/// Key used by the scripted backend: SHA-256 over (system prompt, user
/// prompt, image id). Decoding settings are deliberately excluded.
std::string request_digest(const CompletionRequest& req);

enum class BackendKind { remote_api, scripted_mock };

struct RetryPolicy {
  std::size_t max_attempts = 3;
  std::chrono::milliseconds backoff{500};
};

struct BackendConfig {
  BackendKind kind = BackendKind::scripted_mock;
  std::string endpoint;          // remote_api: full chat-completions URL
  std::string model_name;
  std::string credentials_env;   // remote_api: variable holding the API key
  std::string script_path;       // scripted_mock: JSON map digest -> text
  RetryPolicy retry;
  std::size_t concurrency_limit = 4;
  std::chrono::milliseconds timeout{60000};

  /// ConfigInvalid with the offending field named.
  void validate() const;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const CompletionRequest& req) = 0;
};

/// Deterministic offline backend: a pure lookup from request digest to text.
class ScriptedBackend : public Backend {
 public:
  ScriptedBackend() = default;
  explicit ScriptedBackend(std::map<std::string, std::string> script);

  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  void add(const CompletionRequest& req, std::string response);
  void add_digest(std::string digest, std::string response);
  const std::map<std::string, std::string>& script() const { return script_; }
  void save(const std::filesystem::path& path) const;

  std::string complete(const CompletionRequest& req) override;

  // Instrumentation for concurrency tests.
  void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }
  std::size_t peak_in_flight() const { return peak_; }
  std::size_t calls() const { return calls_; }

 private:
  std::map<std::string, std::string> script_;
  std::chrono::milliseconds latency_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> peak_{0};
  std::atomic<std::size_t> calls_{0};
};

/// OpenAI-style chat-completions client over HTTP(S).
class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(BackendConfig cfg);
  std::string complete(const CompletionRequest& req) override;

  /// Number of HTTP attempts made by the most recent complete() call on this
  /// thread; exposed for retry tests.
  static std::size_t last_attempts();

 private:
  std::string send_once(const std::string& body, const std::string& api_key) const;

  BackendConfig cfg_;
  std::string scheme_host_;
  std::string path_;
};

/// JSON body sent to a chat-completions endpoint for one request.
std::string chat_request_body(const CompletionRequest& req, const std::string& model_name);

struct CompletionOutcome {
  std::string text;
  std::optional<ErrorKind> error;
  std::string error_message;

  bool ok() const { return !error.has_value(); }
};

/// Shared entry point for every pipeline stage. Enforces the concurrency
/// limit across all threads that call into it.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, std::size_t concurrency_limit);

  static std::unique_ptr<Gateway> from_config(const BackendConfig& cfg);

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  std::string complete(const CompletionRequest& req);

  /// Positionally aligned with `reqs`; per-item failures never abort the batch.
  std::vector<CompletionOutcome> batch_complete(const std::vector<CompletionRequest>& reqs);

  std::size_t call_count() const { return calls_; }
  std::size_t concurrency_limit() const { return limit_; }
  Backend& backend() { return *backend_; }

 private:
  std::shared_ptr<Backend> backend_;
  std::size_t limit_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t in_flight_ = 0;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace engage::gateway
