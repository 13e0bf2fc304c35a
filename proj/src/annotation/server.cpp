#include <httplib.h>

#include <filesystem>

#include "engage/annotation.hpp"
#include "engage/text.hpp"

namespace engage::annotation {

namespace {

constexpr const char* kJson = "application/json";

int status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotAssigned: return 403;
    case ErrorKind::DuplicateDecision:
    case ErrorKind::IncompleteAnnotations: return 409;
    case ErrorKind::ValidationError: return 422;
    default: return 500;
  }
}

void send_error(httplib::Response& res, int status, ErrorKind kind, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", std::string(to_string(kind))}, {"message", message}}.dump(), kJson);
}

std::string mime_for(const std::filesystem::path& p) {
  const auto ext = text::to_lower(p.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  return "application/octet-stream";
}

// Runs a handler, mapping library errors onto HTTP statuses.
template <typename Fn>
void guarded(httplib::Response& res, Fn fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, status_for(e.kind()), e.kind(), e.detail());
  } catch (const json::exception& e) {
    send_error(res, 422, ErrorKind::ValidationError, e.what());
  }
}

std::string annotator_of(const httplib::Request& req) {
  auto id = req.get_header_value("X-Annotator-Id");
  if (id.empty() && req.has_param("annotator")) id = req.get_param_value("annotator");
  return text::trim(id);
}

}  // namespace

struct AnnotationServer::Impl {
  AnnotationStore& store;
  std::map<std::string, ImageRecord> images;
  std::optional<std::filesystem::path> export_path;
  httplib::Server http;

  Impl(AnnotationStore& s, std::map<std::string, ImageRecord> im, std::optional<std::filesystem::path> ep)
      : store(s), images(std::move(im)), export_path(std::move(ep)) {
    routes();
  }

  void routes() {
    http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type, X-Annotator-Id"}});
    http.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    http.Get("/api/next", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto who = annotator_of(req);
        if (who.empty()) {
          send_error(res, 400, ErrorKind::ValidationError, "missing X-Annotator-Id header");
          return;
        }
        auto next = store.next_for(who);
        if (!next) {
          res.status = 204;
          return;
        }
        const auto& p = next->pair;
        json image{{"id", p.image_id}, {"url", "/api/images/" + p.image_id}};
        if (auto it = images.find(p.image_id); it != images.end()) image["location"] = it->second.location;
        json body{{"pair", p},
                  {"image", image},
                  {"qtype", std::string(code(p.qtype))},
                  {"type_name", std::string(display_name(p.qtype))},
                  {"tier", std::string(to_string(tier_of(p.qtype)))},
                  {"criteria", criteria_for(p.qtype)},
                  {"remaining", next->remaining}};
        res.set_content(body.dump(), kJson);
      });
    });

    http.Post("/api/decisions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto body = json::parse(req.body);
        if (!body.is_object()) throw Error(ErrorKind::ValidationError, "decision body must be an object");
        const auto who = annotator_of(req);
        if (!who.empty()) body["annotator_id"] = who;
        auto d = body.get<AnnotationDecision>();
        const auto ack = store.record_decision(d);
        res.status = ack == AnnotationStore::Ack::stored ? 201 : 200;
        res.set_content(json{{"status", ack == AnnotationStore::Ack::stored ? "stored" : "duplicate_identical"},
                             {"remaining", store.pending_count(d.annotator_id)}}
                            .dump(),
                        kJson);
      });
    });

    http.Get("/api/agreement", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        const auto a = store.agreement();
        res.set_content(json{{"kappa", a.kappa}, {"raw_agreement", a.raw_agreement}, {"pairs", a.pairs}}.dump(),
                        kJson);
      });
    });

    http.Post("/api/export", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto policy = ExportPolicy::both_accept;
        if (!req.body.empty()) {
          const auto body = json::parse(req.body);
          if (body.contains("policy")) policy = parse_export_policy(body.at("policy").get<std::string>());
        }
        const auto accepted = store.export_accepted(policy);
        std::string out;
        for (const auto& p : accepted) out += json(p).dump() + "\n";
        if (export_path) io::write_text(*export_path, out);
        res.set_header("X-Accepted-Count", std::to_string(accepted.size()));
        res.set_content(out, "application/x-ndjson");
      });
    });

    http.Get("/api/criteria", [](const httplib::Request&, httplib::Response& res) {
      json body = json::object();
      for (auto t : kAllQuestionTypes) body[std::string(code(t))] = criteria_for(t);
      res.set_content(body.dump(), kJson);
    });

    http.Get(R"(/api/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.matches[1].str();
      auto it = images.find(id);
      if (it == images.end()) {
        send_error(res, 404, ErrorKind::ValidationError, "unknown image " + id);
        return;
      }
      const auto& loc = it->second.location;
      if (loc.rfind("http://", 0) == 0 || loc.rfind("https://", 0) == 0) {
        res.set_redirect(loc);
        return;
      }
      std::error_code ec;
      if (!std::filesystem::is_regular_file(loc, ec)) {
        send_error(res, 404, ErrorKind::IoError, "image file missing for " + id);
        return;
      }
      res.set_content(io::read_text(loc), mime_for(loc));
    });
  }
};

AnnotationServer::AnnotationServer(AnnotationStore& store, std::map<std::string, ImageRecord> images,
                                   std::optional<std::filesystem::path> export_path)
    : impl_(std::make_unique<Impl>(store, std::move(images), std::move(export_path))) {}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->http.bind_to_any_port(host);
    if (p < 0) throw Error(ErrorKind::IoError, "cannot bind " + host);
    return p;
  }
  if (!impl_->http.bind_to_port(host, port)) {
    throw Error(ErrorKind::IoError, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void AnnotationServer::listen() { impl_->http.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_) impl_->http.stop();
}

void AnnotationServer::wait_until_ready() { impl_->http.wait_until_ready(); }

}  // namespace engage::annotation
