#pragma once

// JSON-over-HTTP front end: POST /recommend, GET /healthz.

#include <string>

#include <httplib.h>
#include <json.hpp>

#include "hybridmatch/service.hpp"

namespace hm {

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", message}}.dump() + "\n", "application/json");
}

/// Registers the routes on `server`. `holder` must outlive the server.
inline void mount_routes(httplib::Server& server, SnapshotHolder& holder) {
  server.Get("/healthz", [&holder](const httplib::Request&, httplib::Response& res) {
    const auto snap = holder.get();
    res.set_content(nlohmann::json{{"status", "ok"}, {"model_version", snap->model_version}}.dump() + "\n",
                    "application/json");
  });

  server.Post("/recommend", [&holder](const httplib::Request& req, httplib::Response& res) {
    const auto snap = holder.get();
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
      return send_error(res, 400, std::string("malformed JSON: ") + e.what());
    }
    try {
      const RecommendRequest parsed = parse_request(body);
      res.set_content(response_text(recommend(*snap, parsed)), "application/json");
    } catch (const Error& e) {
      const int status = e.kind() == ErrorKind::UnknownEntity ? 404 : 400;
      send_error(res, status, e.what());
    }
  });
}

}  // namespace hm
