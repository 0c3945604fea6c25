#include "hubgate/api.hpp"

#include <sstream>

#include "hubgate/scenario.hpp"

namespace hubgate::api {

using nlohmann::json;

int http_status(Errc code) noexcept {
  switch (code) {
    case Errc::AuthFailed:
    case Errc::Unauthorized:
      return 401;
    case Errc::Forbidden:
      return 403;
    case Errc::UnknownSession:
    case Errc::UnknownPrefix:
    case Errc::NoRoute:
    case Errc::UnknownJob:
    case Errc::UnknownNode:
    case Errc::UnknownVolume:
    case Errc::UnknownBlock:
    case Errc::UnknownDevice:
    case Errc::UnknownClaim:
    case Errc::UnknownTarget:
      return 404;
    case Errc::AlreadyRunning:
    case Errc::IllegalTransition:
    case Errc::DuplicatePrefix:
    case Errc::JobNotRunning:
    case Errc::AlreadyTerminal:
    case Errc::DuplicateNode:
    case Errc::NoMaster:
    case Errc::MasterExists:
    case Errc::Unschedulable:
    case Errc::InsufficientCapacity:
    case Errc::DuplicateDevice:
      return 409;
    case Errc::ExportFull:
    case Errc::QuotaExceeded:
    case Errc::PoolFull:
      return 507;
    case Errc::BackendUnreachable:
      return 502;
    case Errc::PortPoolExhausted:
    case Errc::MasterLost:
    case Errc::InsufficientDevices:
    case Errc::BlockUnavailable:
      return 503;
    case Errc::ChecksumMismatch:
      return 500;
    case Errc::Unsupported:
      return 501;
    case Errc::InvalidOptions:
    case Errc::MissingChargeIdentity:
    case Errc::MalformedPrefix:
    case Errc::WalltimeExceedsQueueMax:
    case Errc::UnknownQueue:
    case Errc::ScenarioParseError:
    case Errc::ConfigError:
      return 400;
  }
  return 500;
}

ApiResponse error_response(const Error& e) {
  return {http_status(e.code()), {{"error", e.name()}, {"message", e.detail()}}};
}

namespace {

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string seg; std::getline(ss, seg, '/');) {
    if (!seg.empty()) parts.push_back(seg);
  }
  return parts;
}

json body_json(const ApiRequest& r) {
  if (r.body.empty()) return json::object();
  try {
    return json::parse(r.body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigError, std::string("request body is not JSON: ") + e.what());
  }
}

Error not_found(const ApiRequest& r) { return Error(Errc::UnknownTarget, r.method + " " + r.path); }

json token_json(const hub::AuthToken& t) {
  return {{"token", t.token}, {"username", t.username}, {"issued_at", t.issued_at},
          {"expires_at", t.issued_at + t.ttl}};
}

}  // namespace

const hub::UserAccount& HubApi::caller(const ApiRequest& r) const {
  if (r.bearer.empty()) throw Error(Errc::Unauthorized, "missing bearer token");
  return d_.hub().verify(r.bearer);
}

const hub::UserAccount& HubApi::admin(const ApiRequest& r) const {
  const auto& user = caller(r);
  if (!user.admin) throw Error(Errc::Forbidden, user.username + " is not an admin");
  return user;
}

ApiResponse HubApi::handle(const ApiRequest& request) {
  try {
    std::lock_guard lock(d_.mutex());
    return route(request);
  } catch (const Error& e) {
    return error_response(e);
  } catch (const json::exception& e) {
    return error_response(Error(Errc::ConfigError, e.what()));
  }
}

ApiResponse HubApi::route(const ApiRequest& r) {
  const auto parts = split_path(r.path);
  const auto n = parts.size();
  if (n < 2 || parts[0] != "hub") throw not_found(r);

  if (n == 3 && parts[1] == "oauth" && parts[2] == "callback" && r.method == "GET") {
    auto code = r.query.find("code");
    if (code == r.query.end()) throw Error(Errc::AuthFailed, "missing code");
    return {200, token_json(d_.login_oauth(code->second))};
  }
  if (parts[1] != "api" || n < 3) throw not_found(r);
  const auto& what = parts[2];

  if (what == "login" && n == 3 && r.method == "POST") {
    auto body = body_json(r);
    const auto secret = body.contains("secret") ? body.at("secret") : body.value("password", json(""));
    return {200, token_json(d_.login(body.value("username", ""), secret.get<std::string>()))};
  }

  if (what == "sessions") {
    if (n == 3 && r.method == "POST") {
      const auto& user = caller(r);
      auto body = body_json(r);
      auto options = (body.contains("options") ? body.at("options") : body).get<hub::SpawnOptions>();
      (void)user;
      return {201, d_.spawn(r.bearer, options)};
    }
    if (n == 3 && r.method == "GET") {
      const auto& user = caller(r);
      json out = json::array();
      for (const auto& s : d_.hub().list_sessions(r.query.count("active") == 0)) {
        if (user.admin || s.username == user.username) out.push_back(s);
      }
      return {200, out};
    }
    if (n == 4 && r.method == "GET") return {200, d_.hub().get_session(r.bearer, parts[3])};
    if (n == 4 && r.method == "DELETE") return {200, d_.stop(r.bearer, parts[3])};
    throw not_found(r);
  }

  if (what == "quota" && n == 3 && r.method == "GET") {
    const auto& user = caller(r);
    for (const auto& row : d_.quota_report()) {
      if (row.username == user.username) return {200, row};
    }
    throw Error(Errc::UnknownVolume, user.username);
  }

  if (what == "routes" && n == 3 && r.method == "GET") {
    admin(r);
    auto snap = d_.routes().snapshot();
    json routes = json::array();
    for (const auto& [_, route] : snap->routes) routes.push_back(route);
    return {200, {{"version", snap->version}, {"hub_backend", snap->hub_backend}, {"routes", routes}}};
  }

  if (what == "status" && n == 3 && r.method == "GET") {
    caller(r);
    return {200, d_.status()};
  }

  if (what == "admin") {
    admin(r);
    return admin_route(r, parts);
  }
  throw not_found(r);
}

ApiResponse HubApi::admin_route(const ApiRequest& r, const std::vector<std::string>& parts) {
  const auto n = parts.size();
  if (n < 4) throw not_found(r);
  const auto& what = parts[3];

  if (what == "nodes") {
    if (n == 4 && r.method == "GET") return {200, d_.list_nodes()};
    if (n == 4 && r.method == "POST") {
      auto body = body_json(r);
      if (body.contains("node") && !body.contains("id")) body["id"] = body["node"];
      return {201, d_.join_node(body.get<deploy::NodeConfig>())};
    }
    if (n == 6 && r.method == "POST") {
      const NodeId node(parts[4]);
      if (parts[5] == "drain") return {200, {{"node", node}, {"actions", d_.drain_node(node)}}};
      if (parts[5] == "kill" || parts[5] == "restore") {
        auto report = parts[5] == "kill" ? d_.kill_node(node) : d_.restore_node(node);
        return {200, {{"node", node}, {"notified", report.notified}, {"affected", report.affected}}};
      }
    }
    throw not_found(r);
  }
  if (what == "quota" && n == 4 && r.method == "GET") return {200, d_.quota_report()};
  if (what == "apply" && n == 4 && r.method == "POST") {
    auto body = body_json(r);
    return {200, d_.apply_manifest(body.contains("manifest") ? body.at("manifest") : body)};
  }
  if (what == "scenario" && n == 4 && r.method == "POST") {
    auto body = body_json(r);
    auto sc = scenario::parse(body.contains("scenario") ? body.at("scenario") : body);
    if (body.value("live", false)) return {200, scenario::run_steps(d_, sc.steps)};
    std::optional<std::uint64_t> seed;
    if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
    return {200, scenario::run(sc, seed)};
  }
  if (what == "clock" && n == 4 && r.method == "POST") {
    auto body = body_json(r);
    d_.advance(body.value("seconds", LogicalTime{0}));
    return {200, {{"now", d_.cluster().now()}}};
  }
  if (what == "files" && n == 6) {
    if (r.method == "PUT" || r.method == "POST") {
      d_.write_user_file(parts[4], parts[5], r.body);
      return {200, {{"user", parts[4]}, {"file", parts[5]}, {"bytes", r.body.size()}}};
    }
    if (r.method == "GET") return {200, {{"content", d_.read_user_file(parts[4], parts[5])}}};
  }
  if (what == "log" && n == 4 && r.method == "GET") return {200, d_.cluster().event_log()};
  throw not_found(r);
}

}  // namespace hubgate::api
