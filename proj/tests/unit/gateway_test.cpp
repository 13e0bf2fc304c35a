#include <gtest/gtest.h>

#include <httplib.h>

#include <cstdlib>
#include <filesystem>
#include <thread>

#include "engage/gateway.hpp"
#include "engage/json_io.hpp"

namespace engage::gateway {
namespace {

CompletionRequest make_request(std::string user, std::string image_id = "img-1") {
  CompletionRequest r;
  r.system_prompt = "judge";
  r.user_prompt = std::move(user);
  r.image = ImageRecord{std::move(image_id), "", "test"};
  return r;
}

TEST(RequestDigest, IgnoresDecodingAndImageLocation) {
  auto a = make_request("q");
  auto b = a;
  b.decoding.temperature = 0.7;
  b.decoding.max_tokens = 5;
  b.image->location = "/elsewhere.png";
  EXPECT_EQ(request_digest(a), request_digest(b));
  auto c = make_request("q", "img-2");
  EXPECT_NE(request_digest(a), request_digest(c));
  auto d = a;
  d.system_prompt = "judgeq";
  d.user_prompt = "";
  EXPECT_NE(request_digest(a), request_digest(d));
}

TEST(ScriptedBackend, EchoesScriptAndIsDeterministic) {
  auto backend = std::make_shared<ScriptedBackend>();
  const auto req = make_request("Is it?");
  backend->add(req, "True");
  Gateway gw(backend, 2);
  EXPECT_EQ(gw.complete(req), "True");
  EXPECT_EQ(gw.complete(req), gw.complete(req));
  EXPECT_EQ(gw.call_count(), 3u);
}

TEST(ScriptedBackend, UnscriptedRequestFails) {
  Gateway gw(std::make_shared<ScriptedBackend>(), 1);
  try {
    gw.complete(make_request("nothing"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnscriptedRequest);
  }
}

TEST(ScriptedBackend, LoadsAndSavesJsonMap) {
  const auto path = std::filesystem::temp_directory_path() / "engage_script_test.json";
  ScriptedBackend original;
  original.add(make_request("a"), "one");
  original.add(make_request("b"), "two");
  original.save(path);
  auto loaded = ScriptedBackend::from_file(path);
  EXPECT_EQ(loaded->script(), original.script());
  std::filesystem::remove(path);
}

TEST(Gateway, BatchPreservesOrder) {
  auto backend = std::make_shared<ScriptedBackend>();
  std::vector<CompletionRequest> reqs;
  for (int i = 0; i < 3; ++i) {
    reqs.push_back(make_request("q" + std::to_string(i)));
    backend->add(reqs.back(), "r" + std::to_string(i));
  }
  backend->set_latency(std::chrono::milliseconds(5));
  Gateway gw(backend, 3);
  auto out = gw.batch_complete(reqs);
  ASSERT_EQ(out.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_TRUE(out[i].ok());
    EXPECT_EQ(out[i].text, "r" + std::to_string(i));
  }
}

TEST(Gateway, PeakInFlightNeverExceedsLimit) {
  auto backend = std::make_shared<ScriptedBackend>();
  std::vector<CompletionRequest> reqs;
  for (int i = 0; i < 10; ++i) {
    reqs.push_back(make_request("q" + std::to_string(i)));
    backend->add(reqs.back(), "r");
  }
  backend->set_latency(std::chrono::milliseconds(10));
  Gateway gw(backend, 2);
  // Callers on many threads share one limiter.
  std::vector<std::thread> callers;
  for (int t = 0; t < 3; ++t) callers.emplace_back([&] { gw.batch_complete(reqs); });
  for (auto& t : callers) t.join();
  EXPECT_LE(backend->peak_in_flight(), 2u);
  EXPECT_GE(backend->peak_in_flight(), 1u);
  EXPECT_EQ(backend->calls(), 30u);
}

TEST(Gateway, PartialFailureIsPositional) {
  auto backend = std::make_shared<ScriptedBackend>();
  std::vector<CompletionRequest> reqs{make_request("a"), make_request("b"), make_request("c")};
  backend->add(reqs[0], "A");
  backend->add(reqs[2], "C");
  Gateway gw(backend, 2);
  auto out = gw.batch_complete(reqs);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].text, "A");
  EXPECT_FALSE(out[1].ok());
  EXPECT_EQ(*out[1].error, ErrorKind::UnscriptedRequest);
  EXPECT_EQ(out[2].text, "C");
}

TEST(Gateway, BatchEqualsElementwiseComplete) {
  auto backend = std::make_shared<ScriptedBackend>();
  std::vector<CompletionRequest> reqs;
  for (int i = 0; i < 8; ++i) {
    reqs.push_back(make_request("p" + std::to_string(i)));
    if (i % 3 != 0) backend->add(reqs.back(), "resp" + std::to_string(i * i));
  }
  Gateway gw(backend, 4);
  auto batch = gw.batch_complete(reqs);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    try {
      EXPECT_EQ(batch[i].text, gw.complete(reqs[i]));
      EXPECT_TRUE(batch[i].ok());
    } catch (const Error& e) {
      EXPECT_EQ(batch[i].error, e.kind());
    }
  }
}

TEST(BackendConfig, Validation) {
  BackendConfig cfg;
  cfg.kind = BackendKind::remote_api;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.endpoint = "https://api.example.com/v1/chat/completions";
  EXPECT_THROW(cfg.validate(), Error);
  cfg.credentials_env = "KEY";
  EXPECT_NO_THROW(cfg.validate());
  cfg.concurrency_limit = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

// --- remote backend against a local server --------------------------------

class LocalChatServer {
 public:
  LocalChatServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalChatServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

CompletionRequest text_only(std::string user) {
  auto r = make_request(std::move(user));
  r.image.reset();
  return r;
}

BackendConfig remote_config(const std::string& endpoint) {
  BackendConfig cfg;
  cfg.kind = BackendKind::remote_api;
  cfg.endpoint = endpoint;
  cfg.model_name = "test-model";
  cfg.credentials_env = "ENGAGE_TEST_API_KEY";
  cfg.retry.max_attempts = 3;
  cfg.retry.backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::milliseconds(2000);
  return cfg;
}

TEST(RemoteBackend, SendsChatRequestAndParsesReply) {
  ::setenv("ENGAGE_TEST_API_KEY", "secret", 1);
  LocalChatServer srv;
  json seen;
  std::string auth;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"False"}}]})",
                    "application/json");
  });

  const auto image = std::filesystem::temp_directory_path() / "engage_gw_image.png";
  io::write_text(image, "PNGDATA");
  RemoteBackend backend(remote_config(srv.endpoint()));
  auto req = make_request("Question: x");
  req.image->location = image.string();
  EXPECT_EQ(backend.complete(req), "False");
  EXPECT_EQ(auth, "Bearer secret");
  EXPECT_EQ(seen["model"], "test-model");
  EXPECT_EQ(seen["temperature"], 0.0);
  EXPECT_EQ(seen["messages"][0]["role"], "system");
  const auto& parts = seen["messages"][1]["content"];
  EXPECT_EQ(parts[0]["text"], "Question: x");
  EXPECT_EQ(parts[1]["image_url"]["url"], "data:image/png;base64,UE5HREFUQQ==");
  std::filesystem::remove(image);
}

TEST(RemoteBackend, RetriesServerErrorsThenSucceeds) {
  ::setenv("ENGAGE_TEST_API_KEY", "secret", 1);
  LocalChatServer srv;
  std::atomic<int> hits{0};
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (++hits < 3) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
  });
  RemoteBackend backend(remote_config(srv.endpoint()));
  EXPECT_EQ(backend.complete(text_only("q")), "ok");
  EXPECT_EQ(RemoteBackend::last_attempts(), 3u);
}

TEST(RemoteBackend, AuthFailureIsNotRetried) {
  ::setenv("ENGAGE_TEST_API_KEY", "wrong", 1);
  LocalChatServer srv;
  std::atomic<int> hits{0};
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 401;
  });
  RemoteBackend backend(remote_config(srv.endpoint()));
  try {
    backend.complete(text_only("q"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AuthFailure);
  }
  EXPECT_EQ(hits, 1);
}

TEST(RemoteBackend, MissingCredentialsIsAuthFailure) {
  ::unsetenv("ENGAGE_TEST_MISSING_KEY");
  auto cfg = remote_config("http://127.0.0.1:9/v1/chat/completions");
  cfg.credentials_env = "ENGAGE_TEST_MISSING_KEY";
  RemoteBackend backend(cfg);
  try {
    backend.complete(text_only("q"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AuthFailure);
  }
}

TEST(RemoteBackend, UnreachableEndpointGivesUpAfterMaxAttempts) {
  ::setenv("ENGAGE_TEST_API_KEY", "secret", 1);
  // Reserve a port, then close it so nothing listens there.
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  auto cfg = remote_config("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions");
  auto gw = Gateway::from_config(cfg);
  try {
    gw->complete(text_only("q"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BackendUnavailable);
  }
  EXPECT_EQ(RemoteBackend::last_attempts(), cfg.retry.max_attempts);
}

}  // namespace
}  // namespace engage::gateway
