#include "engage/gateway.hpp"

#include <algorithm>
#include <thread>

#include "engage/digest.hpp"
#include "engage/json_io.hpp"
#include "engage/parallel.hpp"

namespace engage::gateway {

void CompletionRequest::validate() const {
  if (decoding.max_tokens == 0) {
    throw Error(ErrorKind::ValidationError, "max_tokens must be positive");
  }
  if (!(decoding.temperature >= 0.0)) {
    throw Error(ErrorKind::ValidationError, "temperature must be non-negative");
  }
}

std::string request_digest(const CompletionRequest& req) {
  const std::string image_id = req.image ? req.image->id : std::string();
  return sha256_fields({req.system_prompt, req.user_prompt, image_id});
}

void BackendConfig::validate() const {
  if (concurrency_limit < 1) {
    throw Error(ErrorKind::ConfigInvalid, "concurrency_limit must be at least 1");
  }
  if (retry.max_attempts < 1) {
    throw Error(ErrorKind::ConfigInvalid, "retry.max_attempts must be at least 1");
  }
  if (kind == BackendKind::remote_api) {
    if (endpoint.empty()) throw Error(ErrorKind::ConfigInvalid, "endpoint is required for remote_api");
    if (credentials_env.empty()) {
      throw Error(ErrorKind::ConfigInvalid, "credentials_env is required for remote_api");
    }
    if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
      throw Error(ErrorKind::ConfigInvalid, "endpoint must be an http(s) URL: " + endpoint);
    }
  } else if (script_path.empty()) {
    throw Error(ErrorKind::ConfigInvalid, "script_path is required for scripted_mock");
  }
}

// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::map<std::string, std::string> script)
    : script_(std::move(script)) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  const json j = io::read_json(path);
  if (!j.is_object()) {
    throw Error(ErrorKind::ValidationError, path.string() + ": script must be a JSON object");
  }
  std::map<std::string, std::string> script;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) {
      throw Error(ErrorKind::ValidationError, path.string() + ": entry " + k + " is not a string");
    }
    script.emplace(k, v.get<std::string>());
  }
  return std::make_shared<ScriptedBackend>(std::move(script));
}

void ScriptedBackend::add(const CompletionRequest& req, std::string response) {
  script_[request_digest(req)] = std::move(response);
}

void ScriptedBackend::add_digest(std::string digest, std::string response) {
  script_[std::move(digest)] = std::move(response);
}

void ScriptedBackend::save(const std::filesystem::path& path) const {
  io::write_json(path, json(script_));
}

std::string ScriptedBackend::complete(const CompletionRequest& req) {
  ++calls_;
  const auto now = ++in_flight_;
  auto peak = peak_.load();
  while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
  }
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
  --in_flight_;

  const auto digest = request_digest(req);
  auto it = script_.find(digest);
  if (it == script_.end()) {
    throw Error(ErrorKind::UnscriptedRequest, "no scripted response for digest " + digest);
  }
  return it->second;
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, std::size_t concurrency_limit)
    : backend_(std::move(backend)), limit_(concurrency_limit) {
  if (!backend_) throw Error(ErrorKind::ConfigInvalid, "gateway needs a backend");
  if (limit_ < 1) throw Error(ErrorKind::ConfigInvalid, "concurrency_limit must be at least 1");
}

std::unique_ptr<Gateway> Gateway::from_config(const BackendConfig& cfg) {
  cfg.validate();
  std::shared_ptr<Backend> backend;
  if (cfg.kind == BackendKind::scripted_mock) {
    backend = ScriptedBackend::from_file(cfg.script_path);
  } else {
    backend = std::make_shared<RemoteBackend>(cfg);
  }
  return std::make_unique<Gateway>(std::move(backend), cfg.concurrency_limit);
}

std::string Gateway::complete(const CompletionRequest& req) {
  req.validate();
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < limit_; });
    ++in_flight_;
  }
  struct Release {
    Gateway& g;
    ~Release() {
      {
        std::lock_guard lock(g.mu_);
        --g.in_flight_;
      }
      g.cv_.notify_one();
    }
  } release{*this};
  ++calls_;
  return backend_->complete(req);
}

std::vector<CompletionOutcome> Gateway::batch_complete(const std::vector<CompletionRequest>& reqs) {
  return parallel_map(reqs.size(), limit_, [&](std::size_t i) {
    CompletionOutcome out;
    try {
      out.text = complete(reqs[i]);
    } catch (const Error& e) {
      out.error = e.kind();
      out.error_message = e.what();
    } catch (const std::exception& e) {
      out.error = ErrorKind::BackendUnavailable;
      out.error_message = e.what();
    }
    return out;
  });
}

}  // namespace engage::gateway
