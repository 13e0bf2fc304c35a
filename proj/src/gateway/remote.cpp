#include <httplib.h>

#include <cstdlib>
#include <random>
#include <thread>

#include "engage/digest.hpp"
#include "engage/gateway.hpp"
#include "engage/json_io.hpp"

namespace engage::gateway {

namespace {

thread_local std::size_t g_last_attempts = 0;

std::string mime_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

std::string image_url(const ImageRecord& image) {
  if (image.location.rfind("http://", 0) == 0 || image.location.rfind("https://", 0) == 0 ||
      image.location.rfind("data:", 0) == 0) {
    return image.location;
  }
  if (image.location.empty() || !std::filesystem::exists(image.location)) {
    throw Error(ErrorKind::ValidationError,
                "image " + image.id + " is not resolvable at '" + image.location + "'");
  }
  return "data:" + mime_for(image.location) + ";base64," +
         base64_encode(io::read_text(image.location));
}

// Retryable failures: transport errors, rate limiting and server errors.
struct Retryable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace

std::string chat_request_body(const CompletionRequest& req, const std::string& model_name) {
  json messages = json::array();
  if (!req.system_prompt.empty()) {
    messages.push_back({{"role", "system"}, {"content", req.system_prompt}});
  }
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", req.user_prompt}});
  if (req.image) {
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_url(*req.image)}}}});
  }
  messages.push_back({{"role", "user"}, {"content", content}});
  json body{{"model", model_name},
            {"messages", messages},
            {"temperature", req.decoding.temperature},
            {"max_tokens", req.decoding.max_tokens}};
  return body.dump();
}

RemoteBackend::RemoteBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
  const auto scheme_end = cfg_.endpoint.find("://");
  const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_ = cfg_.endpoint;
    path_ = "/";
  } else {
    scheme_host_ = cfg_.endpoint.substr(0, path_start);
    path_ = cfg_.endpoint.substr(path_start);
  }
}

std::size_t RemoteBackend::last_attempts() { return g_last_attempts; }

std::string RemoteBackend::send_once(const std::string& body, const std::string& api_key) const {
  httplib::Client client(scheme_host_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout).count();
  client.set_connection_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
  client.set_read_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
  httplib::Headers headers{{"Authorization", "Bearer " + api_key}};
  auto res = client.Post(path_, headers, body, "application/json");
  if (!res) throw Retryable("transport error: " + httplib::to_string(res.error()));
  if (res->status == 401 || res->status == 403) {
    throw Error(ErrorKind::AuthFailure, "endpoint rejected credentials (HTTP " +
                                            std::to_string(res->status) + ")");
  }
  if (res->status == 429 || res->status >= 500) {
    throw Retryable("HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(ErrorKind::BackendUnavailable,
                "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    const auto j = json::parse(res->body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    // Some servers return content parts.
    std::string joined;
    for (const auto& part : content) joined += part.value("text", "");
    return joined;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::BackendUnavailable, std::string("malformed completion: ") + e.what());
  }
}

std::string RemoteBackend::complete(const CompletionRequest& req) {
  const char* key = std::getenv(cfg_.credentials_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw Error(ErrorKind::AuthFailure, "environment variable " + cfg_.credentials_env + " is unset");
  }
  const std::string body = chat_request_body(req, cfg_.model_name);

  thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
  std::uniform_real_distribution<double> jitter(0.5, 1.0);
  std::string last_error;
  g_last_attempts = 0;
  for (std::size_t attempt = 0; attempt < cfg_.retry.max_attempts; ++attempt) {
    ++g_last_attempts;
    try {
      return send_once(body, key);
    } catch (const Retryable& e) {
      last_error = e.what();
    }
    if (attempt + 1 < cfg_.retry.max_attempts) {
      const double scale = static_cast<double>(1ULL << std::min<std::size_t>(attempt, 16));
      const auto delay = std::chrono::duration<double, std::milli>(
          static_cast<double>(cfg_.retry.backoff.count()) * scale * jitter(jitter_rng));
      std::this_thread::sleep_for(delay);
    }
  }
  throw Error(ErrorKind::BackendUnavailable,
              "gave up after " + std::to_string(cfg_.retry.max_attempts) +
                  " attempts: " + last_error);
}

}  // namespace engage::gateway
