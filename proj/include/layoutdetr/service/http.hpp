#pragma once

// /v1 HTTP binding of DesignService.
//
//   GET    /v1/health
//   POST   /v1/sessions                          -> 201 {id, ...}
//   GET    /v1/sessions/{id}
//   DELETE /v1/sessions/{id}
//   PUT    /v1/sessions/{id}/background          multipart field "file"/"image", or raw PNG/JPEG body
//   PUT    /v1/sessions/{id}/foreground          {"elements": [...], "button_radius"?, "font"?}
//   POST   /v1/sessions/{id}/candidates?count=6
//   POST   /v1/sessions/{id}/select              {"index": k}
//   PATCH  /v1/sessions/{id}/layout              {"edits": [{"element": i, "box": [cy,cx,h,w]}]} | {"layout": [...]}
//   POST   /v1/sessions/{id}/export[?format=png]
//   POST   /v1/images                            upload a foreground image patch
//   GET    /v1/images/{hash}

#include <memory>
#include <string>

#include "json.hpp"

// Eigen first: httplib brings in <resolv.h>, whose `_res` macro clobbers
// Eigen parameter names.
#include "layoutdetr/service/design_service.hpp"

#include "httplib.h"

namespace layoutdetr::service {

inline void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (!r.bytes.empty() || r.content_type != "application/json")
    res.set_content(r.bytes, r.content_type.c_str());
  else if (r.status != 204)
    res.set_content(r.body.dump(), "application/json");
}

inline std::vector<std::uint8_t> upload_bytes(const httplib::Request& req) {
  std::string data;
  if (req.is_multipart_form_data()) {
    for (const char* field : {"file", "image", "background"})
      if (req.has_file(field)) {
        data = req.get_file_value(field).content;
        break;
      }
  } else {
    data = req.body;
  }
  return {data.begin(), data.end()};
}

inline std::optional<nlohmann::json> parse_body(const httplib::Request& req, httplib::Response& res) {
  try {
    return nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body);
  } catch (const nlohmann::json::exception& e) {
    send(res, {400, {{"error", std::string("malformed JSON body: ") + e.what()}}});
    return std::nullopt;
  }
}

// Registers the routes on `server`; `svc` must outlive it.
inline void register_routes(httplib::Server& server, DesignService& svc) {
  const std::string S = R"(/v1/sessions/([A-Za-z0-9_-]+))";

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, PUT, PATCH, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.set_payload_max_length(64u << 20);
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/v1/health", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
  server.Post("/v1/sessions",
              [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.create_session()); });
  server.Get(S, [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.get_session(req.matches[1]));
  });
  server.Delete(S, [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.delete_session(req.matches[1]));
  });
  server.Put(S + "/background", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.put_background(req.matches[1], upload_bytes(req)));
  });
  server.Put(S + "/foreground", [&svc](const httplib::Request& req, httplib::Response& res) {
    if (auto body = parse_body(req, res)) send(res, svc.put_foreground(req.matches[1], *body));
  });
  server.Post(S + "/candidates", [&svc](const httplib::Request& req, httplib::Response& res) {
    std::optional<int> count;
    if (req.has_param("count")) {
      try {
        count = std::stoi(req.get_param_value("count"));
      } catch (const std::exception&) {
        send(res, {422, {{"error", "count must be an integer"}}});
        return;
      }
    }
    send(res, svc.post_candidates(req.matches[1], count));
  });
  server.Post(S + "/select", [&svc](const httplib::Request& req, httplib::Response& res) {
    if (auto body = parse_body(req, res)) send(res, svc.select(req.matches[1], *body));
  });
  server.Patch(S + "/layout", [&svc](const httplib::Request& req, httplib::Response& res) {
    if (auto body = parse_body(req, res)) send(res, svc.patch_layout(req.matches[1], *body));
  });
  server.Post(S + "/export", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.export_design(req.matches[1], req.get_param_value("format") == "png"));
  });
  server.Post("/v1/images", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.post_image(upload_bytes(req)));
  });
  server.Get(R"(/v1/images/([0-9a-f]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.get_image(req.matches[1]));
  });
}

}  // namespace layoutdetr::service
