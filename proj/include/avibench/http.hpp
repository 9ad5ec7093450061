/*
 * Copyright 2026 The avibench Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "avibench/common.hpp"
#include "avibench/service.hpp"
#include "httplib.h"
#include "json.hpp"

namespace avibench {

struct ServiceConfig {
  std::filesystem::path test_manifest;
  double preview_fraction = 0.15;
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;
  std::string bind = "127.0.0.1:8080";
  std::string admin_token;  // empty disables the close endpoint
  int n_boot = 1000;

  static ServiceConfig from_json(const nlohmann::json& j) {
    ServiceConfig c;
    try {
      if (j.contains("test_manifest")) c.test_manifest = j.at("test_manifest").get<std::string>();
      if (j.contains("preview_fraction")) c.preview_fraction = j.at("preview_fraction").get<double>();
      if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
      if (j.contains("bind")) c.bind = j.at("bind").get<std::string>();
      if (j.contains("admin_token")) c.admin_token = j.at("admin_token").get<std::string>();
      if (j.contains("n_boot")) c.n_boot = j.at("n_boot").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, std::string("service config: ") + e.what());
    }
    return c;
  }

  nlohmann::json to_json() const {
    return {{"test_manifest", test_manifest.string()}, {"preview_fraction", preview_fraction},
            {"seed", seed},                            {"data_dir", data_dir.string()},
            {"bind", bind},                            {"n_boot", n_boot}};
  }

  std::pair<std::string, int> host_port() const {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "bind must be host:port");
    int port = 0;
    const auto* b = bind.data() + colon + 1;
    const auto* e = bind.data() + bind.size();
    auto [p, ec] = std::from_chars(b, e, port);
    if (ec != std::errc() || p != e || port < 0 || port > 65535) {
      throw Error(ErrorCode::kInvalidArgument, "bad port in bind address " + bind);
    }
    return {bind.substr(0, colon), port};
  }
};

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string authorization;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRateLimited: return 429;
    case ErrorCode::kValidation: return 422;
    case ErrorCode::kUnauthorized: return 401;
    case ErrorCode::kPhase: return 409;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kFormat: return 400;
    default: return 500;
  }
}

inline ApiResponse error_response(ErrorCode code, const std::string& detail) {
  return {http_status(code), nlohmann::json{{"code", error_code_name(code)}, {"detail", detail}}.dump()};
}

inline std::string bearer_token(const std::string& header) {
  constexpr std::string_view kPrefix = "Bearer ";
  if (header.size() <= kPrefix.size() || header.compare(0, kPrefix.size(), kPrefix) != 0) return {};
  return header.substr(kPrefix.size());
}

namespace detail {

inline nlohmann::json preview_board_json(const std::vector<PreviewEntry>& board) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : board) {
    nlohmann::json tl = nlohmann::json::array();
    for (const auto& t : p.timeline) {
      tl.push_back({{"submission_id", t.submission_id},
                    {"timestamp", format_utc(t.timestamp)},
                    {"preview_auc", optional_json(t.preview_auc)}});
    }
    out.push_back({{"team_id", p.team_id},
                   {"name", p.name},
                   {"best_preview_auc", optional_json(p.best_preview_auc)},
                   {"n_submissions", p.n_submissions},
                   {"timeline", std::move(tl)}});
  }
  return out;
}

inline nlohmann::json final_board_json(const std::vector<FinalEntry>& board) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : board) {
    out.push_back({{"team_id", f.team_id},
                   {"name", f.name},
                   {"submission_id", f.submission_id},
                   {"final_auc", f.final_auc},
                   {"ci", {f.ci_lo, f.ci_hi}},
                   {"n_submissions", f.n_submissions}});
  }
  return out;
}

inline ApiResponse route(ChallengeService& svc, const ApiRequest& req, const std::string& admin_token) {
  const auto ok = [](const nlohmann::json& j, int status = 200) { return ApiResponse{status, j.dump()}; };
  if (req.method == "POST" && req.path == "/api/teams") {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return error_response(ErrorCode::kValidation, "body must be JSON {\"name\": ...}");
    }
    if (!body.is_object() || !body.contains("name") || !body["name"].is_string()) {
      return error_response(ErrorCode::kValidation, "body must be JSON {\"name\": ...}");
    }
    const auto team = svc.register_team(body["name"].get<std::string>());
    return ok({{"team_id", team.team_id}, {"token", team.token}}, 201);
  }
  if (req.method == "POST" && req.path == "/api/submissions") {
    const auto r = svc.submit(bearer_token(req.authorization), req.body);
    return ok({{"submission_id", r.submission_id},
               {"team_id", r.team_id},
               {"timestamp", format_utc(r.timestamp)},
               {"preview_auc", optional_json(r.preview_auc)}},
              201);
  }
  if (req.method == "GET" && req.path == "/api/leaderboard") {
    const auto it = req.query.find("mode");
    const std::string mode = it == req.query.end() ? "preview" : it->second;
    if (mode == "preview") return ok(preview_board_json(svc.preview_leaderboard()));
    if (mode == "final") return ok(final_board_json(svc.final_leaderboard()));
    return error_response(ErrorCode::kInvalidArgument, "mode must be preview or final");
  }
  if (req.method == "GET" && req.path == "/api/challenge") {
    const auto s = svc.snapshot();
    return ok({{"phase", phase_name(s->phase)},
               {"n_test", s->n_test},
               {"preview_fraction", s->preview_fraction},
               {"n_preview", s->preview_ids.size()},
               {"n_teams", s->teams.size()},
               {"n_submissions", s->submissions.size()}});
  }
  if (req.method == "POST" && req.path == "/api/admin/close") {
    if (admin_token.empty() || bearer_token(req.authorization) != admin_token) {
      return error_response(ErrorCode::kUnauthorized, "admin token required");
    }
    svc.close();
    return ok({{"phase", "closed"}});
  }
  constexpr std::string_view kSubPrefix = "/api/submissions/";
  if (req.method == "GET" && req.path.size() > kSubPrefix.size() && req.path.starts_with(kSubPrefix)) {
    const auto s = svc.snapshot();
    const auto* rec = s->submission(std::string_view(req.path).substr(kSubPrefix.size()));
    if (!rec) return error_response(ErrorCode::kNotFound, "no such submission");
    if (s->phase != Phase::kClosed) {
      return error_response(ErrorCode::kPhase, "submission reports are released after close");
    }
    return ok({{"submission_id", rec->submission_id},
               {"team_id", rec->team_id},
               {"timestamp", format_utc(rec->timestamp)},
               {"preview_auc", optional_json(rec->preview_auc)},
               {"final_auc", rec->final_auc},
               {"report", to_json(*rec->report)}});
  }
  return error_response(ErrorCode::kNotFound, "no route for " + req.method + " " + req.path);
}

}  // namespace detail

/// Transport-independent request handling; errors become {code, detail} JSON.
inline ApiResponse handle_request(ChallengeService& svc, const ApiRequest& req, const std::string& admin_token = {}) {
  try {
    return detail::route(svc, req, admin_token);
  } catch (const Error& e) {
    return error_response(e.code(), e.what());
  } catch (const std::exception& e) {
    return {500, nlohmann::json{{"code", "internal"}, {"detail", e.what()}}.dump()};
  }
}

inline void install_routes(httplib::Server& server, ChallengeService& svc, std::string admin_token) {
  auto adapter = [&svc, admin_token](const httplib::Request& hreq, httplib::Response& hres) {
    ApiRequest req;
    req.method = hreq.method;
    req.path = hreq.path;
    for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
    req.authorization = hreq.get_header_value("Authorization");
    req.body = hreq.body;
    const auto res = handle_request(svc, req, admin_token);
    hres.status = res.status;
    hres.set_content(res.body, res.content_type);
  };
  server.Get(R"(/api/.*)", adapter);
  server.Post(R"(/api/.*)", adapter);
  server.set_payload_max_length(std::size_t{256} << 20);
}

/// Blocks until the server is stopped.
inline void serve(ChallengeService& svc, const ServiceConfig& cfg) {
  httplib::Server server;
  install_routes(server, svc, cfg.admin_token);
  const auto [host, port] = cfg.host_port();
  if (!server.listen(host, port)) throw Error(ErrorCode::kIo, "cannot listen on " + cfg.bind);
}

}  // namespace avibench
