#include <doctest.h>

#include <algorithm>
#include <random>
#include <thread>

#include "hubgate/error.hpp"
#include "hubgate/proxy.hpp"
#include "hubgate/sim.hpp"
#include "hubgate/types.hpp"

using namespace hubgate;

TEST_CASE("error names round-trip for every code") {
  for (int i = 0; i <= static_cast<int>(Errc::ConfigError); ++i) {
    const auto code = static_cast<Errc>(i);
    Errc back{};
    REQUIRE(errc_from_name(errc_name(code), back));
    CHECK(back == code);
  }
  Errc out{};
  CHECK_FALSE(errc_from_name("NotAnError", out));
  const Error e(Errc::QuotaExceeded, "alice");
  CHECK(e.name() == "QuotaExceeded");
  CHECK(std::string(e.what()) == "QuotaExceeded: alice");
}

TEST_CASE("natural ordering of node ids") {
  CHECK(NodeId("n2") < NodeId("n10"));
  CHECK(NodeId("n1") < NodeId("n2"));
  CHECK(NodeId("a") < NodeId("b"));
  CHECK(NodeId("w9") < NodeId("w10"));
  CHECK(NodeId("n010") != NodeId("n10"));
  CHECK(natural_compare("n2", "n2") == std::strong_ordering::equal);
}

TEST_CASE("port pool hands out the lowest free port") {
  PortPool pool(41000, 41999);
  CHECK(pool.size() == 1000);
  CHECK(pool.allocate() == 41000);
  CHECK(pool.allocate() == 41001);
  CHECK(pool.release(41000));
  CHECK_FALSE(pool.release(41000));
  CHECK_FALSE(pool.release(40000));
  CHECK(pool.allocate() == 41000);
  CHECK(pool.allocate() == 41002);
}

TEST_CASE("port pool matches a lowest-free scan oracle under random churn") {
  std::mt19937 rng(7);
  PortPool pool(100, 131);
  std::set<std::uint16_t> held;
  for (int step = 0; step < 5000; ++step) {
    if (!held.empty() && rng() % 3 == 0) {
      auto it = held.begin();
      std::advance(it, rng() % held.size());
      CHECK(pool.release(*it));
      held.erase(it);
    } else if (held.size() < pool.size()) {
      std::uint16_t expect = 100;
      while (held.count(expect)) ++expect;
      const auto got = pool.allocate();
      REQUIRE(got == expect);
      held.insert(got);
    } else {
      CHECK_THROWS_AS(pool.allocate(), Error);
    }
    REQUIRE(pool.allocated_count() + pool.free_count() == pool.size());
    REQUIRE(pool.allocated_count() == held.size());
  }
}

TEST_CASE("port pool exhaustion") {
  PortPool pool(1, 3);
  pool.allocate();
  pool.allocate();
  pool.allocate();
  try {
    pool.allocate();
    FAIL("expected PortPoolExhausted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::PortPoolExhausted);
  }
}

TEST_CASE("timers fire in time then insertion order") {
  sim::VirtualCluster c(1);
  std::vector<std::string> fired;
  c.schedule_after(5, "b", [&] { fired.push_back("b@" + std::to_string(c.now())); });
  c.schedule_after(2, "a", [&] { fired.push_back("a@" + std::to_string(c.now())); });
  c.schedule_after(5, "c", [&] {
    fired.push_back("c@" + std::to_string(c.now()));
    c.schedule_after(0, "d", [&] { fired.push_back("d@" + std::to_string(c.now())); });
  });
  c.schedule_after(0, "z", [&] { fired.push_back("z@" + std::to_string(c.now())); });
  CHECK(fired.empty());  // never synchronous
  c.settle();
  CHECK(fired == std::vector<std::string>{"z@0"});
  c.advance(3);
  CHECK(c.now() == 3);
  c.advance(10);
  CHECK(fired == std::vector<std::string>{"z@0", "a@2", "b@5", "c@5", "d@5"});
  CHECK(c.now() == 13);
}

TEST_CASE("clock and event log are monotone") {
  sim::VirtualCluster c(3);
  std::mt19937 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto d = static_cast<LogicalTime>(rng() % 20);
    c.schedule_after(d, "t", [&c, i] { c.log("test", "tick", {{"i", i}}); });
    if (i % 7 == 0) c.advance(static_cast<LogicalTime>(rng() % 5));
  }
  c.advance(100);
  const auto& log = c.event_log();
  REQUIRE(log.size() == 200);
  for (std::size_t i = 1; i < log.size(); ++i) {
    CHECK(log[i - 1].time <= log[i].time);
    CHECK(log[i - 1].seq < log[i].seq);
  }
}

TEST_CASE("fault fan-out notifies every subscriber") {
  sim::VirtualCluster c(0);
  std::vector<std::string> seen;
  c.subscribe("swarm", [&](const sim::Fault& f) {
    seen.push_back("swarm:" + f.target);
    return true;
  });
  c.subscribe("storage", [&](const sim::Fault& f) {
    seen.push_back("storage:" + f.target);
    return f.target == "n2";
  });
  c.set_target_known([](const sim::Fault& f) { return f.target != "n9"; });
  const auto r = c.inject_fault({sim::FaultKind::KillNode, "n2"});
  CHECK(r.notified == std::vector<std::string>{"swarm", "storage"});
  CHECK(r.affected == std::vector<std::string>{"swarm", "storage"});
  CHECK(seen.size() == 2);
  CHECK_THROWS_AS(c.inject_fault({sim::FaultKind::KillNode, "n9"}), Error);
  CHECK(seen.size() == 2);
  CHECK(c.event_log().back().event == "kill_node");
}

// ---- proxy -----------------------------------------------------------------

namespace {

// Oracle: scan every route and keep the longest one that is a head of the path.
proxy::Resolution brute_resolve(const proxy::TableSnapshot& t, std::string path) {
  if (auto q = path.find('?'); q != std::string::npos) path.resize(q);
  if (path == "/hub" || path.rfind("/hub/", 0) == 0) return {proxy::Target::Hub, t.hub_backend, "", "/hub/"};
  const std::string probe = path.empty() || path.back() != '/' ? path + "/" : path;
  const proxy::Route* best = nullptr;
  for (const auto& [prefix, r] : t.routes) {
    if (probe.rfind(prefix, 0) == 0 && (!best || prefix.size() > best->prefix.size())) best = &r;
  }
  if (!best) return {};
  return {proxy::Target::Backend, best->backend, best->session_id, best->prefix};
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::ConfigError;
}

struct EchoTransport : proxy::Transport {
  std::set<Endpoint> dead;
  std::vector<proxy::HttpRequest> seen;
  std::optional<proxy::HttpResponse> send(const Endpoint& b, const proxy::HttpRequest& r) override {
    seen.push_back(r);
    if (dead.count(b)) return std::nullopt;
    return proxy::HttpResponse{200, {{"Connection", "close"}, {"X-Backend", b.to_string()}}, "OK-" + b.host};
  }
};

}  // namespace

TEST_CASE("add and remove routes") {
  proxy::RoutingTable t({"hub0", 8081});
  CHECK(t.add_route("/user/alice/", {"n3", 41001}, "s1") == 1);
  CHECK(t.resolve("/user/alice/").backend == Endpoint{"n3", 41001});
  CHECK(code_of([&] { t.add_route("/user/alice/", {"n4", 1}, "s2"); }) == Errc::DuplicatePrefix);
  CHECK(code_of([&] { t.add_route("user/alice", {"n4", 1}, "s2"); }) == Errc::MalformedPrefix);
  CHECK(code_of([&] { t.add_route("/user//a/", {"n4", 1}, "s2"); }) == Errc::MalformedPrefix);
  CHECK(code_of([&] { t.add_route("/hub/x/", {"n4", 1}, "s2"); }) == Errc::DuplicatePrefix);
  CHECK(t.version() == 1);
  CHECK(t.remove_route("/user/alice/") == 2);
  CHECK_FALSE(t.contains("/user/alice/"));
  CHECK(code_of([&] { t.remove_route("/user/alice/"); }) == Errc::UnknownPrefix);
  CHECK(t.resolve("/user/alice/").target == proxy::Target::NoRoute);
}

TEST_CASE("resolve examples") {
  proxy::RoutingTable t({"hub0", 8081});
  t.add_route("/user/alice/", {"n3", 41001}, "s1");
  CHECK(t.resolve("/user/alice/tree/a.ipynb").backend == Endpoint{"n3", 41001});
  CHECK(t.resolve("/user/alice").target == proxy::Target::Backend);
  CHECK(t.resolve("/user/alice?x=1").target == proxy::Target::Backend);
  const auto hub = t.resolve("/hub/api/sessions");
  CHECK(hub.target == proxy::Target::Hub);
  CHECK(hub.backend == Endpoint{"hub0", 8081});
  CHECK(t.resolve("/hub").target == proxy::Target::Hub);
  CHECK(t.resolve("/hubx").target == proxy::Target::NoRoute);
  CHECK(t.resolve("/user/bob/").target == proxy::Target::NoRoute);
  CHECK(t.resolve("/user/alicex/").target == proxy::Target::NoRoute);
  CHECK(t.resolve("").target == proxy::Target::NoRoute);
}

TEST_CASE("longest prefix wins") {
  proxy::RoutingTable t({"hub0", 8081});
  t.add_route("/user/", {"fallback", 1}, "sf");
  t.add_route("/user/a/", {"a", 2}, "sa");
  CHECK(t.resolve("/user/a/x").session_id == "sa");
  CHECK(t.resolve("/user/b/x").session_id == "sf");
}

TEST_CASE("resolve agrees with a brute-force scan on random tables and paths") {
  std::mt19937 rng(11);
  const std::vector<std::string> segs{"user", "a", "b", "alice", "hub", "x", "api", "tree"};
  auto rand_path = [&](int max_depth, bool trailing) {
    std::string p;
    const int depth = 1 + static_cast<int>(rng() % max_depth);
    for (int i = 0; i < depth; ++i) p += "/" + segs[rng() % segs.size()];
    if (trailing) p += "/";
    return p;
  };
  for (int round = 0; round < 200; ++round) {
    proxy::RoutingTable t({"hub0", 8081});
    for (int i = 0; i < 8; ++i) {
      const auto p = rand_path(3, true);
      try {
        t.add_route(p, {"h" + std::to_string(i), static_cast<std::uint16_t>(i)}, "s" + std::to_string(i));
      } catch (const Error&) {
      }
    }
    const auto snap = t.snapshot();
    for (int q = 0; q < 50; ++q) {
      const auto path = rand_path(5, rng() % 2 == 0);
      const auto want = brute_resolve(*snap, path);
      const auto got = proxy::resolve(*snap, path);
      REQUIRE(got.target == want.target);
      CHECK(got.backend == want.backend);
      CHECK(got.prefix == want.prefix);
    }
  }
}

TEST_CASE("add then remove restores the table, in any order for disjoint prefixes") {
  proxy::RoutingTable t({"hub0", 8081});
  t.add_route("/user/base/", {"b", 1}, "s0");
  const auto before = t.snapshot()->routes;
  t.add_route("/user/a/", {"a", 1}, "s1");
  t.add_route("/user/b/", {"b", 2}, "s2");
  t.remove_route("/user/a/");
  t.remove_route("/user/b/");
  CHECK(t.snapshot()->routes == before);
  t.add_route("/user/a/", {"a", 1}, "s1");
  t.add_route("/user/b/", {"b", 2}, "s2");
  t.remove_route("/user/b/");
  t.remove_route("/user/a/");
  CHECK(t.snapshot()->routes == before);
}

TEST_CASE("snapshots are unaffected by later mutations") {
  proxy::RoutingTable t({"hub0", 8081});
  t.add_route("/user/alice/", {"n3", 41001}, "s1");
  const auto v1 = t.snapshot();
  t.remove_route("/user/alice/");
  t.add_route("/user/bob/", {"n1", 1}, "s2");
  CHECK(v1->version == 1);
  CHECK(proxy::resolve(*v1, "/user/alice/").target == proxy::Target::Backend);
  CHECK(proxy::resolve(*v1, "/user/bob/").target == proxy::Target::NoRoute);
  CHECK(t.version() == 3);
}

TEST_CASE("concurrent readers see consistent snapshots while a writer mutates") {
  proxy::RoutingTable t({"hub0", 8081});
  std::atomic<bool> done{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    std::uint64_t last = 0;
    while (!done) {
      const auto s = t.snapshot();
      if (s->version < last) ++bad;
      last = s->version;
      // Writer keeps the invariant "route count == version % 2".
      if (s->routes.size() != s->version % 2) ++bad;
    }
  });
  for (int i = 0; i < 2000; ++i) {
    if (i % 2 == 0) {
      t.add_route("/user/x/", {"n", 1}, "s");
    } else {
      t.remove_route("/user/x/");
    }
  }
  done = true;
  reader.join();
  CHECK(bad == 0);
}

TEST_CASE("hop-by-hop headers are stripped") {
  const proxy::Headers in{{"Connection", "close, X-Secret"}, {"Keep-Alive", "5"},
                          {"Transfer-Encoding", "chunked"}, {"X-Secret", "1"},
                          {"Upgrade", "h2c"}, {"Accept", "*/*"}, {"te", "trailers"}};
  const auto out = proxy::strip_hop_by_hop(in);
  CHECK(out == proxy::Headers{{"Accept", "*/*"}});
}

TEST_CASE("forward relays, 404s and 502s") {
  proxy::RoutingTable t({"hub0", 8081});
  t.add_route("/user/alice/", {"alice-host", 1}, "s1");
  EchoTransport tr;
  proxy::EdgeProxy edge(t, tr, 2);
  std::vector<std::string> down;
  edge.on_backend_down([&](const std::string& s, const Endpoint&) { down.push_back(s); });

  auto ok = edge.forward({"GET", "/user/alice/", {{"Connection", "keep-alive"}, {"Accept", "x"}}, ""});
  CHECK(ok.status == 200);
  CHECK(ok.body == "OK-alice-host");
  for (const auto& [k, v] : ok.headers) CHECK(k != "Connection");
  for (const auto& [k, v] : tr.seen.back().headers) CHECK(k != "Connection");

  CHECK(edge.forward({"GET", "/user/bob/", {}, ""}).status == 404);
  CHECK(edge.forward({"GET", "/hub/api/status", {}, ""}).body == "OK-hub0");

  tr.dead.insert({"alice-host", 1});
  CHECK(edge.forward({"GET", "/user/alice/", {}, ""}).status == 502);
  CHECK(down == std::vector<std::string>{"s1"});
}

TEST_CASE("round robin over two replicas is exact") {
  proxy::RoutingTable t({"hub0", 8081});
  t.add_route("/user/alice/", {"a", 1}, "s1");
  EchoTransport tr;
  proxy::EdgeProxy edge(t, tr, 2);
  for (int i = 0; i < 1000; ++i) edge.forward({"GET", "/user/alice/", {}, ""});
  CHECK(edge.served_per_replica() == std::vector<std::uint64_t>{500, 500});
}
