#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hubgate/types.hpp"

namespace hubgate::proxy {

// Prefix owned by the hub itself; never stored as a user route.
inline constexpr std::string_view kHubPrefix = "/hub/";

struct Route {
  std::string prefix;  // begins and ends with '/'
  Endpoint backend;
  std::string session_id;

  friend bool operator==(const Route&, const Route&) = default;
};

void to_json(nlohmann::json& j, const Route& r);
void from_json(const nlohmann::json& j, Route& r);

// Immutable view of the routing table at one version.
struct TableSnapshot {
  std::uint64_t version = 0;
  std::map<std::string, Route> routes;  // keyed by prefix
  Endpoint hub_backend;
};

void to_json(nlohmann::json& j, const TableSnapshot& t);

enum class Target { Backend, Hub, NoRoute };

struct Resolution {
  Target target = Target::NoRoute;
  Endpoint backend;        // set unless NoRoute
  std::string session_id;  // set for Backend
  std::string prefix;      // matched prefix, "/hub/" for Hub
};

// True for "/x/", "/user/alice/": starts and ends with '/', no empty segment.
bool valid_prefix(std::string_view prefix) noexcept;

// Longest-prefix match. "/hub" and "/hub/..." go to the hub backend. A route
// "/user/a/" also matches the bare path "/user/a". Pure function of its inputs.
Resolution resolve(const TableSnapshot& table, std::string_view path);

// Shared routing table: readers take snapshots, writers are serialized. A
// snapshot is never mutated, so a resolve against version v is unaffected by
// later writes.
class RoutingTable {
 public:
  explicit RoutingTable(Endpoint hub_backend);

  // Returns the new table version. Throws MalformedPrefix / DuplicatePrefix.
  std::uint64_t add_route(const std::string& prefix, const Endpoint& backend,
                          const std::string& session_id);
  // Throws UnknownPrefix.
  std::uint64_t remove_route(const std::string& prefix);

  std::shared_ptr<const TableSnapshot> snapshot() const;
  Resolution resolve(std::string_view path) const { return proxy::resolve(*snapshot(), path); }
  std::uint64_t version() const { return snapshot()->version; }
  std::size_t size() const { return snapshot()->routes.size(); }
  bool contains(const std::string& prefix) const { return snapshot()->routes.count(prefix) != 0; }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const TableSnapshot> current_;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

struct HttpRequest {
  std::string method = "GET";
  std::string path;  // may carry a query string
  Headers headers;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  Headers headers;
  std::string body;
};

// Removes Connection, Keep-Alive, Transfer-Encoding, TE, Trailer, Upgrade,
// Proxy-Authenticate, Proxy-Authorization and any header named in Connection.
Headers strip_hop_by_hop(const Headers& headers);

// Delivers one request to a backend. nullopt means the backend is unreachable.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::optional<HttpResponse> send(const Endpoint& backend, const HttpRequest& request) = 0;
};

// Edge proxy replicas sharing one routing table. Requests are assigned to
// replicas round-robin from a single counter so the split is exact.
class EdgeProxy {
 public:
  using BackendDownSink = std::function<void(const std::string& session_id, const Endpoint& backend)>;

  EdgeProxy(const RoutingTable& table, Transport& transport, std::size_t replicas = 2);

  void on_backend_down(BackendDownSink sink) { backend_down_ = std::move(sink); }

  // 404 on NoRoute, 502 (plus a backend-down notification) when the backend
  // cannot be reached. Hop-by-hop headers are stripped in both directions.
  HttpResponse forward(const HttpRequest& request);

  std::size_t replicas() const noexcept { return served_.size(); }
  std::vector<std::uint64_t> served_per_replica() const;

 private:
  const RoutingTable& table_;
  Transport& transport_;
  std::atomic<std::uint64_t> next_{0};
  std::vector<std::atomic<std::uint64_t>> served_;
  BackendDownSink backend_down_;
};

}  // namespace hubgate::proxy
