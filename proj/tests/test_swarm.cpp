#include <doctest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "hubgate/error.hpp"
#include "hubgate/swarm.hpp"
#include "hubgate/volumes.hpp"

using namespace hubgate;
using namespace hubgate::swarm;
namespace fs = std::filesystem;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::ConfigError;
}

SwarmCluster make_swarm(int workers, Resources cap = {8, 16384}) {
  SwarmCluster s;
  s.join_node("n0", {4, 8192}, std::nullopt);
  for (int i = 1; i <= workers; ++i) s.join_node("n" + std::to_string(i), cap, NodeId("n0"));
  return s;
}

ServiceSpec session(const std::string& user, Resources limits = {1, 1024}) {
  return {"jupyter-" + user, 1, limits, Placement::AnySpread, "export/" + user};
}

// Σ limits of RUNNING containers per node, recomputed from the containers.
void check_reservations(const SwarmCluster& s) {
  std::map<NodeId, Resources> sum;
  std::map<NodeId, int> count;
  for (const auto& [_, c] : s.containers()) {
    if (c.state != ContainerState::Running) continue;
    sum[c.node_id] += c.limits;
    ++count[c.node_id];
    REQUIRE(s.node(c.node_id).alive);
  }
  for (const auto& [id, n] : s.nodes()) {
    REQUIRE(n.reserved == sum[id]);
    REQUIRE(n.running == count[id]);
    REQUIRE(n.reserved.fits_within(n.capacity));
  }
}

// Fresh scratch directory under the build tree.
fs::path scratch(const std::string& name) {
  const char* bin = std::getenv("HUBGATE_BINARY_DIR");
  auto dir = fs::path(bin ? bin : fs::temp_directory_path().string()) / "scratch" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("join_node examples") {
  SwarmCluster s;
  CHECK(code_of([&] { s.join_node("n2", {8, 16384}, NodeId("n1")); }) == Errc::NoMaster);
  CHECK(s.join_node("n1", {8, 16384}, std::nullopt).is_master);
  s.join_node("n2", {8, 16384}, NodeId("n1"));
  s.join_node("n3", {8, 16384}, NodeId("n1"));
  CHECK(s.nodes().size() == 3);
  int masters = 0;
  for (const auto& [_, n] : s.nodes()) masters += n.is_master;
  CHECK(masters == 1);
  CHECK(code_of([&] { s.join_node("n2", {8, 16384}, NodeId("n1")); }) == Errc::DuplicateNode);
  CHECK(code_of([&] { s.join_node("m2", {8, 16384}, std::nullopt); }) == Errc::MasterExists);
  CHECK(code_of([&] { s.join_node("n4", {8, 16384}, NodeId("n2")); }) == Errc::NoMaster);
}

TEST_CASE("schedule_service examples") {
  auto s = make_swarm(2);
  const auto hub = s.schedule_service({"hub", 1, {1, 512}, Placement::MasterOnly, {}});
  REQUIRE(hub.size() == 1);
  CHECK(hub[0].node_id == NodeId("n0"));

  const auto four = s.schedule_service({"web", 4, {1, 1024}, Placement::AnySpread, {}});
  std::map<NodeId, int> per;
  for (const auto& c : four) ++per[c.node_id];
  CHECK(per == std::map<NodeId, int>{{"n1", 2}, {"n2", 2}});

  CHECK(code_of([&] { s.schedule_service({"huge", 1, {1, 65536}, Placement::AnySpread, {}}); }) ==
        Errc::Unschedulable);
  CHECK_FALSE(s.has_service("huge"));
  CHECK(code_of([&] { s.schedule_service({"web", 1, {1, 1}, Placement::AnySpread, {}}); }) == Errc::ConfigError);
  CHECK(code_of([&] { s.schedule_service({"bad", 0, {1, 1}, Placement::AnySpread, {}}); }) == Errc::ConfigError);
}

TEST_CASE("placement is all-or-nothing") {
  auto s = make_swarm(2, {2, 4096});
  const auto before = s.nodes();
  CHECK(code_of([&] { s.schedule_service({"big", 5, {1, 1024}, Placement::AnySpread, {}}); }) ==
        Errc::Unschedulable);
  for (const auto& [id, n] : s.nodes()) CHECK(n.reserved == before.at(id).reserved);
  CHECK(s.containers().empty());
}

namespace {

// Every assignment of r replicas onto w equal workers that respects capacity;
// returns the smallest achievable spread (max count - min count).
int best_spread(int r, int w, int per_node_cap) {
  int best = 1 << 30;
  std::vector<int> counts(static_cast<std::size_t>(w), 0);
  std::function<void(int)> rec = [&](int left) {
    if (left == 0) {
      const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
      best = std::min(best, *mx - *mn);
      return;
    }
    for (auto& c : counts) {
      if (c == per_node_cap) continue;
      ++c;
      rec(left - 1);
      --c;
    }
  };
  rec(r);
  return best;
}

}  // namespace

TEST_CASE("spread placement achieves the optimum of an exhaustive search on empty equal nodes") {
  for (int w = 1; w <= 4; ++w) {
    for (int r = 1; r <= 8; ++r) {
      auto s = make_swarm(w, {8, 8192});
      const auto placed = s.schedule_service({"svc", r, {1, 1024}, Placement::AnySpread, {}});
      std::map<NodeId, int> per;
      for (int i = 1; i <= w; ++i) per["n" + std::to_string(i)] = 0;
      for (const auto& c : placed) ++per[c.node_id];
      int mn = 1 << 30, mx = 0;
      for (const auto& [_, n] : per) {
        mn = std::min(mn, n);
        mx = std::max(mx, n);
      }
      CHECK(mx - mn == best_spread(r, w, 8));
      CHECK(mx - mn <= 1);
      CHECK(per.count("n0") == 0);
    }
  }
}

TEST_CASE("spread picks the lowest id among least-loaded nodes") {
  auto s = make_swarm(3);
  CHECK(s.schedule_service(session("a"))[0].node_id == NodeId("n1"));
  CHECK(s.schedule_service(session("b"))[0].node_id == NodeId("n2"));
  CHECK(s.schedule_service(session("c"))[0].node_id == NodeId("n3"));
  CHECK(s.schedule_service(session("d"))[0].node_id == NodeId("n1"));
  s.remove_service("b");
  CHECK(s.schedule_service(session("e"))[0].node_id == NodeId("n2"));
}

TEST_CASE("handle_node_failure examples") {
  auto s = make_swarm(3);
  // Three session containers on n2.
  s.schedule_service(session("x1"));
  for (const auto& u : {"a", "b", "c"}) {
    s.schedule_service(session(std::string("pad-") + u));
  }
  std::multiset<std::pair<std::string, std::string>> before;
  for (const auto& [_, c] : s.containers()) {
    if (c.state == ContainerState::Running) before.insert({c.service, *c.volume});
  }
  int on_n2 = 0;
  for (const auto& [_, c] : s.containers()) on_n2 += c.node_id == NodeId("n2");
  CHECK(on_n2 == 1);

  const auto actions = s.handle_node_failure("n2");
  REQUIRE(actions.size() == 1);
  REQUIRE(actions[0].replacement);
  CHECK(actions[0].replacement->node_id != NodeId("n2"));
  CHECK(actions[0].replacement->volume == s.containers().at(actions[0].lost_container).volume);
  CHECK(s.containers().at(actions[0].lost_container).state == ContainerState::Lost);
  std::multiset<std::pair<std::string, std::string>> after;
  for (const auto& [_, c] : s.containers()) {
    if (c.state == ContainerState::Running) after.insert({c.service, *c.volume});
  }
  CHECK(before == after);
  check_reservations(s);

  CHECK(s.handle_node_failure("n2").empty());  // already dead
  CHECK(code_of([&] { s.handle_node_failure("n9"); }) == Errc::UnknownNode);
}

TEST_CASE("killing a node with three sessions reschedules all three per the placement rule") {
  auto s = make_swarm(3);
  std::vector<std::string> users;
  for (int i = 0; i < 9; ++i) {
    users.push_back("u" + std::to_string(i));
    s.schedule_service(session(users.back()));
  }
  // Replay the placement rule independently: each lost container, in order,
  // goes to the alive worker with the fewest containers, lowest id on ties.
  std::map<NodeId, int> count;
  for (const auto& [_, c] : s.containers()) ++count[c.node_id];
  CHECK(count == std::map<NodeId, int>{{"n1", 3}, {"n2", 3}, {"n3", 3}});
  count.erase("n2");
  std::vector<NodeId> expect;
  for (int i = 0; i < 3; ++i) {
    const auto best = std::min_element(count.begin(), count.end(), [](const auto& a, const auto& b) {
      return a.second < b.second || (a.second == b.second && a.first < b.first);
    });
    expect.push_back(best->first);
    ++best->second;
  }
  const auto actions = s.handle_node_failure("n2");
  REQUIRE(actions.size() == 3);
  std::vector<NodeId> got;
  for (const auto& a : actions) {
    REQUIRE(a.replacement);
    got.push_back(a.replacement->node_id);
    CHECK(a.replacement->volume == "export/" + a.service.substr(std::string("jupyter-").size()));
  }
  CHECK(got == expect);
}

TEST_CASE("failover without room leaves an empty replacement") {
  auto s = make_swarm(2, {1, 1024});
  s.schedule_service(session("a"));
  s.schedule_service(session("b"));
  const auto actions = s.handle_node_failure("n1");
  REQUIRE(actions.size() == 1);
  CHECK_FALSE(actions[0].replacement);
  check_reservations(s);
}

TEST_CASE("master failure halts the control plane until restored") {
  auto s = make_swarm(2);
  s.schedule_service({"hub", 1, {1, 512}, Placement::MasterOnly, {}});
  CHECK(code_of([&] { s.handle_node_failure("n0"); }) == Errc::MasterLost);
  CHECK_FALSE(s.master_alive());
  CHECK(code_of([&] { s.schedule_service(session("a")); }) == Errc::MasterLost);
  CHECK(code_of([&] { s.drain_node("n1"); }) == Errc::MasterLost);
  s.restore_node("n0");
  CHECK(s.master_alive());
  CHECK_NOTHROW(s.schedule_service(session("a")));
}

TEST_CASE("restored nodes return empty") {
  auto s = make_swarm(2);
  s.schedule_service(session("a"));
  s.handle_node_failure("n1");
  s.restore_node("n1");
  CHECK(s.node("n1").running == 0);
  CHECK(s.node("n1").alive);
  check_reservations(s);
}

TEST_CASE("drain is atomic") {
  auto s = make_swarm(2, {2, 4096});
  s.schedule_service(session("a"));
  s.schedule_service(session("b"));
  s.schedule_service(session("c"));
  // n1 holds a and c, n2 holds b; n2 can take only one more.
  const auto before = s.nodes();
  const auto containers = s.containers();
  CHECK(code_of([&] { s.drain_node("n1"); }) == Errc::InsufficientCapacity);
  for (const auto& [id, n] : s.nodes()) {
    CHECK(n.reserved == before.at(id).reserved);
    CHECK(n.cordoned == before.at(id).cordoned);
  }
  CHECK(s.containers().size() == containers.size());
  s.remove_service("jupyter-c");
  const auto moved = s.drain_node("n2");
  CHECK(moved.size() == 1);
  CHECK(s.node("n2").cordoned);
  CHECK(s.node("n2").running == 0);
  CHECK(code_of([&] { s.drain_node("n7"); }) == Errc::UnknownNode);
  check_reservations(s);
}

TEST_CASE("reservations never exceed capacity under random operations") {
  std::mt19937 rng(31);
  auto s = make_swarm(4, {4, 8192});
  int next = 0;
  for (int step = 0; step < 1500; ++step) {
    const auto r = rng() % 10;
    try {
      if (r < 5) {
        s.schedule_service(session("u" + std::to_string(next++),
                                   {1 + static_cast<int>(rng() % 2), 512 * (1 + static_cast<int>(rng() % 4))}));
      } else if (r < 7) {
        s.remove_service("jupyter-u" + std::to_string(rng() % (next + 1)));
      } else if (r == 7) {
        s.handle_node_failure("n" + std::to_string(1 + rng() % 4));
      } else if (r == 8) {
        s.restore_node("n" + std::to_string(1 + rng() % 4));
      } else {
        s.drain_node("n" + std::to_string(1 + rng() % 4));
      }
    } catch (const Error&) {
    }
    check_reservations(s);
  }
}

// ---- volumes ---------------------------------------------------------------

TEST_CASE("ensure_user_volume examples") {
  VolumeManager v({10240, 20480}, "export");
  const auto a = v.ensure_user_volume("alice");
  CHECK(a.path == "export/alice");
  CHECK(a.used == 0);
  CHECK(v.ensure_user_volume("alice") == a);
  v.ensure_user_volume("bob");
  CHECK(code_of([&] { v.ensure_user_volume("carol"); }) == Errc::ExportFull);
  CHECK(v.volume_count() == 2);
}

TEST_CASE("enforce_quota_write examples") {
  VolumeManager v({10240, 512000});
  v.ensure_user_volume("alice");
  v.enforce_quota_write("alice", 9216);
  CHECK(v.enforce_quota_write("alice", 1024).used == 10240);
  VolumeManager w({10240, 512000});
  w.ensure_user_volume("alice");
  w.enforce_quota_write("alice", 9216);
  CHECK(code_of([&] { w.enforce_quota_write("alice", 2048); }) == Errc::QuotaExceeded);
  CHECK(w.find("alice")->used == 9216);
  CHECK(code_of([&] { w.enforce_quota_write("nobody", 1); }) == Errc::UnknownVolume);
  CHECK(code_of([&] { w.enforce_quota_write("alice", -1); }) == Errc::QuotaExceeded);
}

TEST_CASE("max_capacity examples") {
  CHECK(max_capacity({5120, 512000}) == 100);
  CHECK(max_capacity({10, 95}) == 9);
  CHECK(max_capacity({10, 10}) == 1);
  CHECK(code_of([] { max_capacity({0, 10}); }) == Errc::ConfigError);
  CHECK(code_of([] { max_capacity({20, 10}); }) == Errc::ConfigError);
}

TEST_CASE("ensure succeeds exactly max_capacity times") {
  std::mt19937 rng(3);
  for (int round = 0; round < 50; ++round) {
    const QuotaPolicy p{1 + static_cast<MiB>(rng() % 50), 0};
    const QuotaPolicy policy{p.per_user_quota, p.per_user_quota + static_cast<MiB>(rng() % 1000)};
    VolumeManager v(policy);
    std::int64_t ok = 0;
    for (int u = 0;; ++u) {
      try {
        v.ensure_user_volume("u" + std::to_string(u));
        ++ok;
      } catch (const Error& e) {
        CHECK(e.code() == Errc::ExportFull);
        break;
      }
    }
    CHECK(ok == max_capacity(policy));
  }
}

TEST_CASE("quota_report examples") {
  VolumeManager empty({10240, 512000});
  CHECK(empty.quota_report().empty());
  VolumeManager v({10240, 512000});
  v.ensure_user_volume("bob");
  v.ensure_user_volume("alice");
  v.enforce_quota_write("alice", 9216);
  const auto rows = v.quota_report();
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].username == "alice");
  CHECK(rows[0].percent == doctest::Approx(90.0));
  CHECK(rows[0].flagged);
  CHECK(rows[1].username == "bob");
  CHECK(rows[1].percent == 0.0);
  CHECK_FALSE(rows[1].flagged);
  const auto round_trip = nlohmann::json(rows[0]).get<QuotaRow>();
  CHECK(round_trip.username == "alice");
  CHECK(round_trip.flagged);
}

TEST_CASE("concurrent writers never overshoot the quota") {
  VolumeManager v({10240, 512000});
  v.ensure_user_volume("alice");
  std::atomic<int> accepted{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 500; ++i) {
        try {
          v.enforce_quota_write("alice", 7);
          ++accepted;
        } catch (const Error&) {
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(v.find("alice")->used == accepted * 7);
  CHECK(v.find("alice")->used <= 10240);
  CHECK(accepted == 10240 / 7);
}

TEST_CASE("files are charged against the quota and overwrites are credited") {
  VolumeManager v({3, 100});
  v.ensure_user_volume("alice");
  v.write_file("alice", "a.txt", "hello");
  CHECK(v.find("alice")->used == 1);
  v.write_file("alice", "a.txt", std::string(2u << 20, 'x'));
  CHECK(v.find("alice")->used == 2);
  CHECK(code_of([&] { v.write_file("alice", "b.txt", std::string(2u << 20, 'y')); }) == Errc::QuotaExceeded);
  CHECK(v.find("alice")->used == 2);
  CHECK(v.read_file("alice", "a.txt").size() == (2u << 20));
  CHECK(code_of([&] { v.read_file("alice", "missing"); }) == Errc::UnknownTarget);
  CHECK(code_of([&] { v.write_file("alice", "../x", "y"); }) == Errc::ConfigError);
  CHECK(code_of([&] { v.write_file("bob", "x", "y"); }) == Errc::UnknownVolume);
}

TEST_CASE("persisted volumes live on disk with a JSON sidecar and survive reopening") {
  const auto root = scratch("volumes");
  {
    VolumeManager v({1024, 4096}, root.string(), true);
    v.ensure_user_volume("alice");
    v.write_file("alice", "notes.txt", "marker");
    v.enforce_quota_write("alice", 10);
  }
  CHECK(fs::exists(root / "alice" / "notes.txt"));
  CHECK(fs::exists(root / VolumeManager::kSidecar));
  VolumeManager again({1024, 4096}, root.string(), true);
  REQUIRE(again.find("alice"));
  CHECK(again.find("alice")->used == 11);
  CHECK(again.read_file("alice", "notes.txt") == "marker");
}
