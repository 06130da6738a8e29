#include "chai/http.hpp"

namespace chai {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, const ServiceResponse& r) {
  res.status = r.status;
  if (r.status != 204) res.set_content(r.body.dump(), "application/json");
}

// Missing body means {}; malformed JSON is reported as a 400.
bool parse_body(const httplib::Request& req, httplib::Response& res, json& out) {
  if (req.body.empty()) {
    out = json::object();
    return true;
  }
  try {
    out = json::parse(req.body);
    return true;
  } catch (const json::exception& e) {
    reply(res, {400, {{"error", std::string("malformed JSON: ") + e.what()}}});
    return false;
  }
}

}  // namespace

void register_routes(httplib::Server& server, NegotiationService& service, const std::string& static_dir) {
  server.Post("/api/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (parse_body(req, res, body)) reply(res, service.create_session(body));
  });
  server.Post(R"(/api/sessions/([^/]+)/messages)", [&](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (parse_body(req, res, body)) reply(res, service.post_message(req.matches[1], body));
  });
  server.Post(R"(/api/sessions/([^/]+)/survey)", [&](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (parse_body(req, res, body)) reply(res, service.submit_survey(req.matches[1], body));
  });
  server.Get(R"(/api/sessions/([^/]+)/transcript)", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.transcript(req.matches[1]));
  });
  server.Get("/api/survey-questions", [&](const httplib::Request&, httplib::Response& res) {
    reply(res, service.questions());
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    reply(res, {500, {{"error", what}}});
  });
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir))
    throw Error(ErrorCode::Io, "static directory not found: " + static_dir);
}

}  // namespace chai
