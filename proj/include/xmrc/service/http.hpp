// HTTP/1.1 front end. JSON for control endpoints, application/octet-stream
// for container bytes, "Authorization: Bearer <token>" on everything except
// POST /api/login and the static /ui assets. Errors are {"code", "message"}.
#pragma once

#include <httplib.h>

#include <json.hpp>
#include <string>

#include "xmrc/service/service.hpp"

namespace xmrc::service {

inline int http_status(Errc code) {
  switch (code) {
    case Errc::Unauthorized: return 401;
    case Errc::UnknownDataId:
    case Errc::UnknownJob: return 404;
    case Errc::TooLarge: return 413;
    case Errc::NotReady:
    case Errc::JobFailed: return 409;
    case Errc::KindMismatch:
    case Errc::MissingACS:
    case Errc::ShapeMismatch: return 422;
    case Errc::Io: return 500;
    default: return 400;
  }
}

namespace detail {

inline void json_reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void error_reply(httplib::Response& res, std::string_view code, const std::string& message, int status) {
  json_reply(res, status, {{"code", code}, {"message", message}});
}

inline void bytes_reply(httplib::Response& res, const std::vector<std::uint8_t>& bytes, const char* type) {
  res.status = 200;
  res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(), type);
}

inline std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) return {};
  return h.substr(prefix.size());
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) raise(Errc::InvalidParams, "request body must be a JSON object");
  return j;
}

inline JobSubmission submission_from_json(const nlohmann::json& j) {
  JobSubmission s;
  try {
    const auto method = parse_method(j.at("method").get<std::string>());
    if (!method) raise(Errc::InvalidParams, "method must be pfista or pfista_parallel");
    s.method = *method;
    s.data_id = j.at("data_id").get<std::string>();
    s.mask_id = j.at("mask_id").get<std::string>();
    s.maps_id = opt_string(j, "maps_id");
    s.truth_id = opt_string(j, "truth_id");
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::InvalidParams, std::string("bad job request: ") + e.what());
  }
  for (const auto& [key, v] : j.items()) {
    if (key != "method" && key != "data_id" && key != "mask_id" && key != "maps_id" && key != "truth_id" &&
        key != "params") {
      raise(Errc::InvalidParams, "unknown field: " + key);
    }
  }
  s.params = params_from_json(j.contains("params") ? j.at("params") : nlohmann::json());
  return s;
}

/// Job view without bookkeeping fields.
inline nlohmann::json job_view(const JobRecord& r) {
  auto j = to_json(r);
  j.erase("seq");
  j.erase("input_deleted");
  return j;
}

}  // namespace detail

class HttpServer {
 public:
  explicit HttpServer(Service& service) : service_(service) {
    server_.set_payload_max_length(service_.config().max_upload_bytes);
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      if (res.status == 413) {
        detail::error_reply(res, "TooLarge", "request body exceeds the upload cap", 413);
      } else if (res.status == 404) {
        detail::error_reply(res, "NotFound", "no such route", 404);
      } else {
        detail::error_reply(res, "BadRequest", httplib::status_message(res.status), res.status);
      }
      return httplib::Server::HandlerResponse::Handled;
    });
    if (!service_.config().ui_dir.empty()) server_.set_mount_point("/ui", service_.config().ui_dir.string());
    routes();
  }

  ~HttpServer() { stop(); }

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else if (server_.bind_to_port(host, port)) {
      port_ = port;
    } else {
      port_ = -1;
    }
    if (port_ < 0) raise(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
    return port_;
  }

  /// Blocks until stop().
  void run() { server_.listen_after_bind(); }

  void stop() { server_.stop(); }

  void wait_until_ready() const { server_.wait_until_ready(); }
  int port() const { return port_; }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  /// Maps typed errors to status codes; anything else is a 500.
  static httplib::Server::Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        detail::error_reply(res, e.name(), e.what(), http_status(e.code()));
      } catch (const std::exception& e) {
        detail::error_reply(res, "Internal", e.what(), 500);
      }
    };
  }

  void routes() {
    Service& svc = service_;
    const std::string id = "([^/]+)";

    server_.Post("/api/login", guarded([&svc](const auto& req, auto& res) {
                   const auto body = detail::parse_body(req);
                   std::string user, pass;
                   try {
                     user = body.at("username").template get<std::string>();
                     pass = body.at("password").template get<std::string>();
                   } catch (const nlohmann::json::exception&) {
                     raise(Errc::InvalidParams, "username and password are required");
                   }
                   const auto t = svc.login(user, pass);
                   detail::json_reply(res, 200, {{"token", t.token}, {"expires_ms", t.expires_ms}});
                 }));

    server_.Post("/api/data", guarded([&svc](const auto& req, auto& res) {
                   const auto token = detail::bearer(req);
                   svc.authenticate(token);
                   const auto* p = reinterpret_cast<const std::uint8_t*>(req.body.data());
                   detail::json_reply(res, 201, to_json(svc.upload(token, {p, req.body.size()})));
                 }));
    server_.Get("/api/data/" + id, guarded([&svc](const auto& req, auto& res) {
                  detail::json_reply(res, 200, to_json(svc.data_meta(detail::bearer(req), req.matches[1])));
                }));
    server_.Get("/api/data/" + id + "/raw", guarded([&svc](const auto& req, auto& res) {
                  detail::bytes_reply(res, svc.data_bytes(detail::bearer(req), req.matches[1]),
                                      "application/octet-stream");
                }));
    server_.Delete("/api/data/" + id, guarded([&svc](const auto& req, auto& res) {
                     svc.delete_data(detail::bearer(req), req.matches[1]);
                     res.status = 204;
                   }));

    server_.Post("/api/jobs", guarded([&svc](const auto& req, auto& res) {
                   const auto token = detail::bearer(req);
                   svc.authenticate(token);
                   const auto job = svc.submit(token, detail::submission_from_json(detail::parse_body(req)));
                   detail::json_reply(res, 201, {{"job_id", job}});
                 }));
    server_.Get("/api/jobs/" + id, guarded([&svc](const auto& req, auto& res) {
                  detail::json_reply(res, 200, detail::job_view(svc.status(detail::bearer(req), req.matches[1])));
                }));
    server_.Get("/api/jobs/" + id + "/result", guarded([&svc](const auto& req, auto& res) {
                  detail::bytes_reply(res, svc.fetch_result(detail::bearer(req), req.matches[1]),
                                      "application/octet-stream");
                }));
    server_.Get("/api/jobs/" + id + "/errormap", guarded([&svc](const auto& req, auto& res) {
                  detail::bytes_reply(res, svc.fetch_errormap(detail::bearer(req), req.matches[1]),
                                      "image/x-portable-graymap");
                }));
    server_.Delete("/api/jobs/" + id, guarded([&svc](const auto& req, auto& res) {
                     svc.delete_job(detail::bearer(req), req.matches[1]);
                     res.status = 204;
                   }));

    server_.Get("/api/demo", guarded([&svc](const auto& req, auto& res) {
                  auto list = nlohmann::json::array();
                  for (const auto& e : svc.demo_list(detail::bearer(req))) {
                    list.push_back({{"name", e.name},
                                    {"kind", static_cast<int>(e.kind)},
                                    {"kind_name", kind_name(e.kind)},
                                    {"nc", e.nc},
                                    {"ny", e.ny},
                                    {"nx", e.nx},
                                    {"size_bytes", e.size_bytes}});
                  }
                  detail::json_reply(res, 200, {{"fixtures", list}});
                }));
    server_.Get(R"(/api/demo/([A-Za-z0-9_.\-]+))", guarded([&svc](const auto& req, auto& res) {
                  detail::bytes_reply(res, svc.demo_bytes(detail::bearer(req), req.matches[1]),
                                      "application/octet-stream");
                }));
  }

  Service& service_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace xmrc::service
