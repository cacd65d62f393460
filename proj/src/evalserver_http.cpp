#include <httplib.h>

#include <thread>

#include "cigli/evalserver.hpp"

namespace cigli::evalserver {

using json = nlohmann::json;

struct HttpServer::Impl {
  Session& session;
  ServeOptions opts;
  httplib::Server server;
  std::thread thread;

  Impl(Session& s, ServeOptions o) : session(s), opts(std::move(o)) {}

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const EvalError& e) {
      send_json(res, e.status(), json{{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, json{{"error", e.what()}});
    }
  }

  void routes() {
    server.Get("/api/assignment", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("annotator") || req.get_param_value("annotator").empty())
          throw EvalError(400, "query parameter 'annotator' is required");
        const auto a = session.next_assignment(req.get_param_value("annotator"));
        send_json(res, 200, json{{"assignment", a ? a->to_json() : json(nullptr)}});
      });
    });
    server.Post("/api/rating", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        json body;
        try {
          body = json::parse(req.body);
        } catch (const json::parse_error&) {
          throw EvalError(400, "request body is not valid JSON");
        }
        session.submit_rating(RatingRecord::from_json(body));
        send_json(res, 200, json{{"status", "accepted"}});
      });
    });
    server.Get("/api/report", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, session.report().to_json()); });
    });
    server.Get(R"(/api/image/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string bytes = session.image_bytes(req.matches[1]);
        res.status = 200;
        res.set_content(bytes, "image/png");
      });
    });
    if (!opts.static_dir.empty()) {
      if (!server.set_mount_point("/", opts.static_dir.string()))
        throw EvalError(400, "static directory " + opts.static_dir.string() + " does not exist");
    }
  }
};

HttpServer::HttpServer(Session& session, ServeOptions opts) : impl_(std::make_unique<Impl>(session, std::move(opts))) {
  impl_->routes();
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start() {
  if (impl_->opts.port == 0) {
    port_ = impl_->server.bind_to_any_port(impl_->opts.host);
  } else {
    port_ = impl_->server.bind_to_port(impl_->opts.host, impl_->opts.port) ? impl_->opts.port : -1;
  }
  if (port_ < 0) throw EvalError(500, "cannot bind " + impl_->opts.host + ":" + std::to_string(impl_->opts.port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpServer::run() {
  port_ = impl_->opts.port;
  if (!impl_->server.listen(impl_->opts.host, impl_->opts.port))
    throw EvalError(500, "cannot listen on " + impl_->opts.host + ":" + std::to_string(impl_->opts.port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace cigli::evalserver
