#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hubgate/deployment.hpp"
#include "hubgate/error.hpp"
#include "support.hpp"

using namespace hubgate;
using hubgate::testing::thrown;
using nlohmann::json;

namespace {

json base_config(const char* kind) {
  auto c = json::parse(R"({
    "auth": {"mode": "static",
             "static_users": [{"username": "root", "password": "rootpw", "admin": true}],
             "generate": {"prefix": "u", "count": 6, "password": "pw"}},
    "swarm": {"per_user_quota": 1024, "export_total": 8192},
    "storage": {"replication": 2, "device_blocks": 4096}})");
  c["spawner"] = {{"kind", kind}};
  if (std::string(kind) == "SWARM") {
    c["nodes"] = json::parse(R"([{"id": "m", "cpus": 4, "memory": 8192, "master": true},
                                 {"id": "w1", "cpus": 8, "memory": 32768},
                                 {"id": "w2", "cpus": 8, "memory": 32768}])");
  } else {
    c["nodes"] = json::parse(R"([{"id": "n1", "cpus": 8, "memory": 32768, "slots": 2},
                                 {"id": "n2", "cpus": 8, "memory": 32768, "slots": 2},
                                 {"id": "n3", "cpus": 8, "memory": 32768, "slots": 2}])");
  }
  return c;
}

struct Harness {
  explicit Harness(const char* kind, json patch = json::object()) : d(make(kind, patch)) {}
  static deploy::Config make(const char* kind, const json& patch) {
    auto c = base_config(kind);
    c.merge_patch(patch);
    return deploy::parse_config(c);
  }
  hub::SessionRecord spawn(const std::string& user, hub::SpawnOptions o = {}) {
    return d.spawn(d.login(user, "pw").token, o);
  }
  hub::SessionState state(const std::string& id) { return d.hub().get_session(id).state; }
  deploy::Deployment d;
};

void check_clean(deploy::Deployment& d) {
  const auto problems = d.check_invariants();
  CHECK_MESSAGE(problems.empty(), (problems.empty() ? "" : problems.front()));
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = deploy::parse_config(base_config("BATCH"));
  CHECK(c.spawner == hub::SpawnerKind::Batch);
  CHECK(c.users.size() == 7);
  CHECK(c.users[1].charge_identity == std::optional<std::string>("u1"));
  CHECK(c.nodes.size() == 3);
  CHECK(c.nodes[0].slots == 2);
  CHECK(thrown([] { deploy::parse_config(json::array()); }) == Errc::ConfigError);
  CHECK(thrown([] { deploy::parse_config({{"spawner", "NOPE"}}); }) == Errc::ConfigError);
  CHECK(thrown([] { deploy::parse_config({{"auth", {{"mode", "ldap"}}}}); }) == Errc::ConfigError);
  CHECK(thrown([] { deploy::parse_config({{"readiness_timeout_s", 0}}); }) == Errc::ConfigError);
  CHECK(thrown([] { deploy::parse_config({{"storage", {{"replication", 0}}}}); }) == Errc::ConfigError);
  CHECK(thrown([] { deploy::parse_config(json::parse(R"({"nodes": [{"cpus": 1}]})")); }) == Errc::ConfigError);
  const auto o = deploy::parse_config(json::parse(R"({"auth": {"mode": "oauth", "oauth_codes": {"c1": "alice"}}})"));
  CHECK(o.auth_mode == hub::AuthMode::OAuthStub);
  CHECK(o.users.at(0).oauth_code == std::optional<std::string>("c1"));
}

TEST_CASE("every spawner takes a session from spawn to RUNNING and back") {
  for (const char* kind : {"BATCH", "SWARM", "K8S"}) {
    CAPTURE(kind);
    Harness h(kind);
    const auto rec = h.spawn("u1");
    CHECK(rec.state != hub::SessionState::Running);  // readiness takes logical time
    h.d.advance(10);
    CHECK(h.state(rec.session_id) == hub::SessionState::Running);
    const auto prefix = h.d.hub().route_prefix_for("u1");
    auto r = h.d.get(prefix + "lab");
    CHECK(r.status == 200);
    CHECK(r.body == "OK-u1");
    CHECK(h.d.get("/hub/home").body == "hub");
    check_clean(h.d);

    const auto stopped = h.d.stop(h.d.login("u1", "pw").token, rec.session_id);
    CHECK(stopped.state == hub::SessionState::Stopped);
    CHECK_FALSE(h.d.spawner().holds_resources(rec.session_id));
    CHECK(h.d.get(prefix).status == 404);  // route gone, /user/ space is not the hub's
    check_clean(h.d);
    // A second session for the same user starts cleanly.
    const auto again = h.spawn("u1");
    h.d.advance(10);
    CHECK(h.state(again.session_id) == hub::SessionState::Running);
  }
}

TEST_CASE("a dropped backend turns into 502 and then FAILED") {
  for (const char* kind : {"BATCH", "SWARM", "K8S"}) {
    CAPTURE(kind);
    Harness h(kind);
    const auto a = h.spawn("u1");
    const auto b = h.spawn("u2");
    h.d.advance(10);
    h.d.drop_backend(a.session_id);
    CHECK(h.d.get(h.d.hub().route_prefix_for("u1")).status == 502);
    CHECK(h.state(a.session_id) == hub::SessionState::Failed);
    CHECK_FALSE(h.d.spawner().holds_resources(a.session_id));
    CHECK(h.state(b.session_id) == hub::SessionState::Running);
    CHECK(h.d.get(h.d.hub().route_prefix_for("u2")).status == 200);
    check_clean(h.d);
    CHECK(thrown([&] { h.d.drop_backend("s99"); }) == Errc::UnknownTarget);
  }
}

TEST_CASE("node faults fan out to the active spawner") {
  SUBCASE("batch jobs on a lost node fail") {
    Harness h("BATCH");
    const auto a = h.spawn("u1");
    h.d.advance(10);
    const auto node = h.d.batch()->scheduler().job(*h.d.batch()->job_of(a.session_id)).assigned_node;
    REQUIRE(node);
    const auto report = h.d.kill_node(*node);
    CHECK(report.affected == std::vector<std::string>{"spawner-batch"});
    CHECK(report.notified.size() == 2);  // the proxy subscriber sees it too
    CHECK(h.state(a.session_id) == hub::SessionState::Failed);
    h.d.restore_node(*node);
    check_clean(h.d);
  }
  SUBCASE("swarm sessions move and keep their files") {
    Harness h("SWARM");
    std::vector<std::string> ids;
    for (int i = 1; i <= 4; ++i) ids.push_back(h.spawn("u" + std::to_string(i)).session_id);
    h.d.advance(10);
    for (int i = 1; i <= 4; ++i) h.d.write_user_file("u" + std::to_string(i), "f", "x" + std::to_string(i));
    h.d.kill_node("w1");
    for (const auto& id : ids) CHECK(h.state(id) == hub::SessionState::Running);
    for (int i = 1; i <= 4; ++i) {
      const auto u = "u" + std::to_string(i);
      CHECK(h.d.get(h.d.hub().route_prefix_for(u)).body == "OK-" + u);
      CHECK(h.d.read_user_file(u, "f") == "x" + std::to_string(i));
    }
    check_clean(h.d);
  }
  SUBCASE("k8s pods migrate and the pool stays healthy") {
    Harness h("K8S");
    for (int i = 1; i <= 6; ++i) h.spawn("u" + std::to_string(i));
    h.d.advance(10);
    for (int i = 1; i <= 6; ++i) h.d.write_user_file("u" + std::to_string(i), "nb.ipynb", "cells" + std::to_string(i));
    h.d.kill_node("n2");
    CHECK(h.d.hub().count_in_state(hub::SessionState::Running) == 6);
    CHECK(h.d.pool_health() == "HEALTHY");
    for (int i = 1; i <= 6; ++i) {
      const auto u = "u" + std::to_string(i);
      CHECK(h.d.get(h.d.hub().route_prefix_for(u)).body == "OK-" + u);
      CHECK(h.d.read_user_file(u, "nb.ipynb") == "cells" + std::to_string(i));
    }
    check_clean(h.d);
  }
  SUBCASE("unknown targets are reported") {
    Harness h("K8S");
    CHECK(thrown([&] { h.d.kill_node("n9"); }) == Errc::UnknownTarget);
  }
}

TEST_CASE("quota reports per spawner") {
  Harness sw("SWARM");
  sw.spawn("u1");
  sw.d.advance(10);
  sw.d.write_user_file("u1", "big", std::string(950u << 20, 'x'));
  auto rows = sw.d.quota_report();
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].username == "u1");
  CHECK(rows[0].used == 950);
  CHECK(rows[0].flagged);

  Harness k("K8S");
  const auto rec = k.spawn("u1", [] {
    hub::SpawnOptions o;
    o.disk_quota = 8;
    return o;
  }());
  k.d.advance(10);
  REQUIRE(k.state(rec.session_id) == hub::SessionState::Running);
  k.d.write_user_file("u1", "a", "hello");
  rows = k.d.quota_report();
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].quota == 8);

  Harness b("BATCH");
  CHECK(thrown([&] { b.d.quota_report(); }) == Errc::Unsupported);
}

TEST_CASE("drain through the deployment") {
  Harness h("K8S");
  for (int i = 1; i <= 3; ++i) h.spawn("u" + std::to_string(i));
  h.d.advance(10);
  const auto moves = h.d.drain_node("n1");
  for (const auto& m : moves) CHECK(m.at("from") == "n1");
  CHECK(h.d.hub().count_in_state(hub::SessionState::Running) == 3);
  for (int i = 1; i <= 3; ++i) {
    const auto u = "u" + std::to_string(i);
    CHECK(h.d.get(h.d.hub().route_prefix_for(u)).body == "OK-" + u);
  }
  check_clean(h.d);
  Harness b("BATCH");
  CHECK(thrown([&] { b.d.drain_node("n1"); }) == Errc::Unsupported);
}

TEST_CASE("apply_manifest guards hub-managed pods") {
  Harness h("K8S");
  const auto r = h.d.apply_manifest(json::parse(R"([{"name": "grader", "limits": {"cpus": 1, "memory": 512}}])"));
  CHECK(r.is_object());
  bool placed = false;
  for (const auto& n : h.d.list_nodes()) placed |= n.at("pods").size() > 0 && n.dump().find("grader") != std::string::npos;
  CHECK(placed);
  CHECK(thrown([&] { h.d.apply_manifest(json::parse(R"([{"name": "jupyter-u1"}])")); }) == Errc::ConfigError);
  Harness s("SWARM");
  CHECK(thrown([&] { s.d.apply_manifest(json::array()); }) == Errc::Unsupported);
}

TEST_CASE("same seed, same config, same event log") {
  for (const char* kind : {"BATCH", "SWARM", "K8S"}) {
    CAPTURE(kind);
    auto run = [kind] {
      Harness h(kind, {{"seed", 99}});
      std::vector<std::string> tokens;
      for (int i = 1; i <= 5; ++i) tokens.push_back(h.spawn("u" + std::to_string(i)).session_id);
      h.d.advance(7);
      h.d.drop_backend(tokens[1]);
      h.d.advance(60);
      return std::make_pair(h.d.cluster().event_log(), h.d.login("u1", "pw").token);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first.size() > 10);
  }
}

TEST_CASE("status summarises the deployment") {
  Harness h("K8S");
  h.spawn("u1");
  h.d.advance(10);
  const auto s = h.d.status();
  CHECK(s.at("spawner") == "K8S");
  CHECK(s.at("sessions").at("RUNNING") == 1);
  CHECK(s.at("pool_health") == "HEALTHY");
  CHECK(s.at("routes") == 1);
}

TEST_CASE("shipped example configs boot") {
  int count = 0;
  for (const auto& e : std::filesystem::directory_iterator(hubgate::testing::source_dir() / "configs")) {
    if (e.path().extension() != ".json") continue;
    CAPTURE(e.path().string());
    std::ifstream in(e.path());
    deploy::Deployment d(deploy::parse_config(json::parse(in)));
    CHECK(d.check_invariants().empty());
    CHECK_FALSE(d.list_nodes().empty());
    ++count;
  }
  CHECK(count >= 3);
}
