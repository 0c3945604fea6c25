#include <doctest.h>

#include "hubgate/api.hpp"
#include "hubgate/error.hpp"
#include "support.hpp"

using namespace hubgate;
using nlohmann::json;

namespace {

deploy::Config config(const char* kind) {
  auto c = json::parse(R"({
    "auth": {"mode": "static",
             "static_users": [{"username": "root", "password": "rootpw", "admin": true},
                              {"username": "alice", "password": "apw", "charge_identity": "alice"},
                              {"username": "bob", "password": "bpw"}]},
    "swarm": {"per_user_quota": 1024, "export_total": 4096},
    "nodes": [{"id": "m", "cpus": 4, "memory": 8192, "master": true},
              {"id": "n1", "cpus": 8, "memory": 32768},
              {"id": "n2", "cpus": 8, "memory": 32768}]})");
  c["spawner"] = kind;
  return deploy::parse_config(c);
}

struct Api {
  explicit Api(const char* kind = "K8S") : d(config(kind)), api(d) {}

  api::ApiResponse call(const std::string& method, const std::string& path, const json& body = nullptr,
                        const std::string& bearer = {}, std::map<std::string, std::string> query = {}) {
    return api.handle({method, path, std::move(query), body.is_null() ? std::string() : body.dump(), bearer});
  }
  std::string login(const std::string& user, const std::string& pw) {
    auto r = call("POST", "/hub/api/login", {{"username", user}, {"secret", pw}});
    REQUIRE(r.status == 200);
    return r.body.at("token");
  }

  deploy::Deployment d;
  api::HubApi api;
};

}  // namespace

TEST_CASE("error names map onto HTTP statuses") {
  CHECK(api::http_status(Errc::AuthFailed) == 401);
  CHECK(api::http_status(Errc::Unauthorized) == 401);
  CHECK(api::http_status(Errc::Forbidden) == 403);
  CHECK(api::http_status(Errc::UnknownSession) == 404);
  CHECK(api::http_status(Errc::AlreadyRunning) == 409);
  CHECK(api::http_status(Errc::InvalidOptions) == 400);
  CHECK(api::http_status(Errc::ExportFull) == 507);
  CHECK(api::http_status(Errc::BackendUnreachable) == 502);
  CHECK(api::http_status(Errc::Unsupported) == 501);
  // Every code maps into the error range and names round trip through the body.
  for (int i = 0; i <= static_cast<int>(Errc::ConfigError); ++i) {  // ConfigError is the last code
    const auto code = static_cast<Errc>(i);
    const auto st = api::http_status(code);
    CHECK(st >= 400);
    CHECK(st < 600);
    const auto r = api::error_response(Error(code, "detail"));
    Errc back;
    REQUIRE(errc_from_name(r.body.at("error").get<std::string>(), back));
    CHECK(back == code);
    CHECK(r.body.at("message") == "detail");
  }
}

TEST_CASE("login and oauth endpoints") {
  Api a;
  const auto token = a.login("alice", "apw");
  CHECK(token.size() == 32);
  auto bad = a.call("POST", "/hub/api/login", {{"username", "alice"}, {"secret", "nope"}});
  CHECK(bad.status == 401);
  CHECK(bad.body.at("error") == "AuthFailed");
  CHECK(a.call("POST", "/hub/api/login", nullptr).status == 401);
  CHECK(a.call("POST", "/hub/api/login", nullptr, {}, {}).body.at("error") == "AuthFailed");
  auto garbage = a.api.handle({"POST", "/hub/api/login", {}, "{not json", {}});
  CHECK(garbage.status == 400);
  // Static mode refuses oauth codes.
  CHECK(a.call("GET", "/hub/oauth/callback", nullptr, {}, {{"code", "c"}}).status == 401);
  CHECK(a.call("GET", "/hub/oauth/callback").status == 401);

  deploy::Config oc = config("K8S");
  oc.auth_mode = hub::AuthMode::OAuthStub;
  oc.users.push_back({"carol", {}, std::nullopt, false, "code-carol"});
  deploy::Deployment d(oc);
  api::HubApi api(d);
  auto ok = api.handle({"GET", "/hub/oauth/callback", {{"code", "code-carol"}}, {}, {}});
  CHECK(ok.status == 200);
  CHECK(ok.body.at("username") == "carol");
  CHECK(ok.body.at("expires_at").get<LogicalTime>() > ok.body.at("issued_at").get<LogicalTime>());
}

TEST_CASE("session lifecycle over the API") {
  Api a;
  const auto alice = a.login("alice", "apw");
  const auto bob = a.login("bob", "bpw");
  const auto root = a.login("root", "rootpw");

  CHECK(a.call("POST", "/hub/api/sessions", {{"options", json::object()}}).status == 401);
  CHECK(a.call("POST", "/hub/api/sessions", {{"options", json::object()}}, "f00").body.at("error") == "Unauthorized");
  auto created = a.call("POST", "/hub/api/sessions", {{"options", {{"cpus", 2}}}}, alice);
  REQUIRE(created.status == 201);
  const auto id = created.body.at("session_id").get<std::string>();
  CHECK(created.body.at("state") == "PENDING");
  CHECK(a.call("POST", "/hub/api/sessions", json::object(), alice).body.at("error") == "AlreadyRunning");
  CHECK(a.call("POST", "/hub/api/sessions", {{"options", {{"cpus", 0}}}}, bob).status == 400);
  CHECK(a.call("POST", "/hub/api/sessions", {{"options", {{"cpus", "two"}}}}, bob).body.at("error") ==
        "InvalidOptions");

  a.call("POST", "/hub/api/admin/clock", {{"seconds", 10}}, root);
  auto got = a.call("GET", "/hub/api/sessions/" + id, nullptr, alice);
  CHECK(got.status == 200);
  CHECK(got.body.at("state") == "RUNNING");
  CHECK(a.call("GET", "/hub/api/sessions/" + id, nullptr, bob).status == 403);
  CHECK(a.call("GET", "/hub/api/sessions/" + id, nullptr, root).status == 200);
  CHECK(a.call("GET", "/hub/api/sessions/s99", nullptr, root).status == 404);

  a.call("POST", "/hub/api/sessions", json::object(), bob);
  CHECK(a.call("GET", "/hub/api/sessions", nullptr, alice).body.size() == 1);
  CHECK(a.call("GET", "/hub/api/sessions", nullptr, root).body.size() == 2);

  CHECK(a.call("DELETE", "/hub/api/sessions/" + id, nullptr, bob).status == 403);
  auto stopped = a.call("DELETE", "/hub/api/sessions/" + id, nullptr, alice);
  CHECK(stopped.status == 200);
  CHECK(stopped.body.at("state") == "STOPPED");
  CHECK(a.call("DELETE", "/hub/api/sessions/" + id, nullptr, alice).status == 404);
  CHECK(a.call("GET", "/hub/api/sessions", nullptr, root, {{"active", "1"}}).body.size() == 1);
}

TEST_CASE("status, routes and quota endpoints") {
  Api a("SWARM");
  const auto alice = a.login("alice", "apw");
  const auto root = a.login("root", "rootpw");
  a.call("POST", "/hub/api/sessions", json::object(), alice);
  a.call("POST", "/hub/api/admin/clock", {{"seconds", 10}}, root);
  CHECK(a.call("GET", "/hub/api/status", nullptr, alice).body.at("sessions").at("RUNNING") == 1);
  CHECK(a.call("GET", "/hub/api/status").status == 401);
  CHECK(a.call("GET", "/hub/api/routes", nullptr, alice).status == 403);
  auto routes = a.call("GET", "/hub/api/routes", nullptr, root);
  CHECK(routes.body.at("routes").size() == 1);
  CHECK(routes.body.at("routes")[0].at("prefix") == "/user/alice/");
  CHECK(routes.body.at("version").get<int>() >= 1);

  auto put = a.api.handle({"PUT", "/hub/api/admin/files/alice/notes.txt", {}, std::string(3u << 20, 'z'), root});
  CHECK(put.status == 200);
  auto q = a.call("GET", "/hub/api/quota", nullptr, alice);
  CHECK(q.status == 200);
  CHECK(q.body.at("used") == 3);
  CHECK(q.body.at("quota") == 1024);
  auto all = a.call("GET", "/hub/api/admin/quota", nullptr, root);
  CHECK(all.body.size() == 1);
  CHECK(a.call("GET", "/hub/api/admin/files/alice/notes.txt", nullptr, root).body.at("content").get<std::string>().size() ==
        3u << 20);
  const auto bob = a.login("bob", "bpw");
  CHECK(a.call("GET", "/hub/api/quota", nullptr, bob).body.at("error") == "UnknownVolume");
}

TEST_CASE("admin node endpoints") {
  Api a;
  const auto root = a.login("root", "rootpw");
  const auto alice = a.login("alice", "apw");
  CHECK(a.call("GET", "/hub/api/admin/nodes", nullptr, alice).status == 403);
  CHECK(a.call("GET", "/hub/api/admin/nodes", nullptr, root).body.size() == 3);
  auto joined = a.call("POST", "/hub/api/admin/nodes", {{"node", "n3"}, {"cpus", 4}}, root);
  CHECK(joined.status == 201);
  CHECK(a.call("POST", "/hub/api/admin/nodes", {{"id", "n3"}}, root).body.at("error") == "DuplicateNode");
  a.call("POST", "/hub/api/sessions", json::object(), alice);
  a.call("POST", "/hub/api/admin/clock", {{"seconds", 10}}, root);
  const auto node = a.d.k8s()->orchestrator().node_of("jupyter-alice");
  REQUIRE(node);
  auto drained = a.call("POST", "/hub/api/admin/nodes/" + node->str() + "/drain", nullptr, root);
  CHECK(drained.status == 200);
  bool moved_alice = false;
  for (const auto& act : drained.body.at("actions")) moved_alice |= act.at("pod") == "jupyter-alice";
  CHECK(moved_alice);
  CHECK(a.call("POST", "/hub/api/admin/nodes/n9/drain", nullptr, root).status == 404);
  auto killed = a.call("POST", "/hub/api/admin/nodes/n3/kill", nullptr, root);
  CHECK(killed.status == 200);
  CHECK(killed.body.at("notified").size() >= 1);
  CHECK(a.call("POST", "/hub/api/admin/nodes/n3/restore", nullptr, root).status == 200);
  CHECK(a.call("POST", "/hub/api/admin/nodes/n3/explode", nullptr, root).status == 404);
}

TEST_CASE("apply, scenario and log endpoints") {
  Api a;
  const auto root = a.login("root", "rootpw");
  auto applied = a.call("POST", "/hub/api/admin/apply",
                        json::parse(R"({"pods": [{"name": "grader", "limits": {"cpus": 1, "memory": 256}}]})"), root);
  CHECK(applied.status == 200);
  CHECK(applied.body.at("actions").size() == 1);
  CHECK(a.call("POST", "/hub/api/admin/apply", json::parse(R"([{"name": ""}])"), root).status == 400);

  const auto sc = json::parse(R"({"config": {"spawner": "K8S"}, "steps": [
      {"op": "join", "node": "x1"}, {"op": "assert", "check": "invariants"}]})");
  auto rep = a.call("POST", "/hub/api/admin/scenario", {{"scenario", sc}, {"seed", 4}}, root);
  CHECK(rep.status == 200);
  CHECK(rep.body.at("ok") == true);
  CHECK(rep.body.at("seed") == 4);
  // Live runs act on the server's own deployment.
  auto live = a.call("POST", "/hub/api/admin/scenario", {{"scenario", sc}, {"live", true}}, root);
  CHECK(live.body.at("ok") == true);
  CHECK(a.d.list_nodes().size() == 4);
  CHECK(a.call("POST", "/hub/api/admin/scenario", {{"scenario", 5}}, root).body.at("error") == "ScenarioParseError");
  CHECK(a.call("GET", "/hub/api/admin/log", nullptr, root).body.size() > 0);
}

TEST_CASE("unknown paths are 404") {
  Api a;
  const auto root = a.login("root", "rootpw");
  for (const char* p : {"/", "/nothub/api/status", "/hub", "/hub/api", "/hub/api/frob", "/hub/api/admin",
                        "/hub/api/admin/what"}) {
    CAPTURE(p);
    CHECK(a.call("GET", p, nullptr, root).status == 404);
  }
  CHECK(a.call("PATCH", "/hub/api/sessions", nullptr, root).status == 404);
}
