#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hubgate/batch.hpp"
#include "hubgate/hub.hpp"
#include "hubgate/k8s.hpp"
#include "hubgate/proxy.hpp"
#include "hubgate/sim.hpp"
#include "hubgate/spawners.hpp"
#include "hubgate/storage.hpp"
#include "hubgate/swarm.hpp"
#include "hubgate/volumes.hpp"

namespace hubgate::deploy {

struct UserConfig {
  std::string username;
  std::string password;
  std::optional<std::string> charge_identity;
  bool admin = false;
  std::optional<std::string> oauth_code;
};

struct NodeConfig {
  NodeId id;
  Resources capacity{8, 32768};
  int slots = 1;                     // batch
  bool master = false;               // swarm
  std::int64_t device_blocks = 0;    // k8s; 0 takes the deployment default
};

void from_json(const nlohmann::json& j, NodeConfig& n);
void to_json(nlohmann::json& j, const NodeConfig& n);

struct Config {
  hub::SpawnerKind spawner = hub::SpawnerKind::K8s;
  spawners::Timing timing;
  hub::AuthMode auth_mode = hub::AuthMode::Static;
  std::vector<UserConfig> users;
  hub::HubConfig hub;

  std::vector<batch::QueueSpec> queues;
  std::string hub_host = "hub";
  Endpoint hub_backend{"hub", 8081};

  swarm::QuotaPolicy quota;
  std::string export_root = "export";
  bool persist_volumes = false;

  int replication = 2;
  std::string storage_root;            // empty keeps blocks in memory
  std::int64_t device_blocks = 16384;  // per node

  std::vector<NodeConfig> nodes;  // joined at startup, in order
  bool system_pods = true;        // hub + edge proxies as pods / master service
  std::uint64_t seed = 0;
  bool deterministic_tokens = true;
};

// Keys: spawner.kind, spawner.timing, auth.mode, auth.static_users,
// auth.oauth_codes, auth.generate, charge.mode, charge.community_account,
// readiness_timeout_s, token_ttl_s, batch.queues, batch.hub_host, swarm.*,
// storage.*, nodes, seed. Throws ConfigError.
Config parse_config(const nlohmann::json& j);

std::vector<batch::QueueSpec> default_queues();

// Reaches simulated backends; a live backend answers 200 "OK-<username>".
class SimTransport final : public proxy::Transport {
 public:
  using Lookup = std::function<std::optional<std::string>(const Endpoint&)>;
  SimTransport(Endpoint hub_backend, Lookup lookup) : hub_(std::move(hub_backend)), lookup_(std::move(lookup)) {}
  std::optional<proxy::HttpResponse> send(const Endpoint& backend, const proxy::HttpRequest& request) override;

 private:
  Endpoint hub_;
  Lookup lookup_;
};

// One running hub: the virtual cluster, routing table, edge proxies, hub core
// and exactly one spawner over its substrate. Every public operation leaves the
// cluster settled at the current logical time. Callers that share a deployment
// across threads hold mutex().
class Deployment {
 public:
  explicit Deployment(Config config, std::unique_ptr<proxy::Transport> transport = nullptr);
  ~Deployment();
  Deployment(const Deployment&) = delete;
  Deployment& operator=(const Deployment&) = delete;

  std::recursive_mutex& mutex() const noexcept { return mu_; }
  const Config& config() const noexcept { return config_; }
  sim::VirtualCluster& cluster() noexcept { return cluster_; }
  const sim::VirtualCluster& cluster() const noexcept { return cluster_; }
  hub::Hub& hub() noexcept { return *hub_; }
  const hub::Hub& hub() const noexcept { return *hub_; }
  proxy::RoutingTable& routes() noexcept { return routes_; }
  proxy::EdgeProxy& edge() noexcept { return *edge_; }
  hub::Spawner& spawner() noexcept { return *spawner_; }

  spawners::BatchSpawner* batch() noexcept { return batch_spawner_.get(); }
  spawners::SwarmSpawner* swarm() noexcept { return swarm_spawner_.get(); }
  spawners::K8sSpawner* k8s() noexcept { return k8s_spawner_.get(); }
  storage::StoragePool* pool() noexcept { return pool_.get(); }
  swarm::VolumeManager* volumes() noexcept { return volumes_.get(); }

  hub::AuthToken login(const std::string& username, const std::string& password);
  hub::AuthToken login_oauth(const std::string& code);
  hub::SessionRecord spawn(const std::string& token, const hub::SpawnOptions& options);
  hub::SessionRecord stop(const std::string& token, const std::string& session_id);

  nlohmann::json join_node(NodeConfig node);
  nlohmann::json list_nodes() const;
  nlohmann::json drain_node(const NodeId& node);
  sim::FaultReport kill_node(const NodeId& node);
  sim::FaultReport restore_node(const NodeId& node);
  sim::FaultReport drop_backend(const std::string& session_id);

  void advance(LogicalTime seconds);
  // Drains the event queue and every timer due now.
  void settle();

  // Swarm: volume ledger. K8s: claim usage. Throws Unsupported for batch.
  std::vector<swarm::QuotaRow> quota_report() const;
  // K8s only: merges pod specs into the desired state and reconciles.
  nlohmann::json apply_manifest(const nlohmann::json& manifest);

  void write_user_file(const std::string& username, const std::string& name, const std::string& content);
  std::string read_user_file(const std::string& username, const std::string& name) const;

  proxy::HttpResponse request(const proxy::HttpRequest& request);
  proxy::HttpResponse get(const std::string& path) { return request({"GET", path, {}, {}}); }

  // "HEALTHY"/"DEGRADED" for K8s; "HEALTHY" elsewhere.
  std::string pool_health() const;
  std::vector<std::string> check_invariants() const;
  nlohmann::json status() const;

  // Username served by a live simulated backend at `e`, if any.
  std::optional<std::string> backend_owner(const Endpoint& e) const;

 private:
  bool target_known(const sim::Fault& fault) const;
  void start_system_services();

  Config config_;
  mutable std::recursive_mutex mu_;
  sim::VirtualCluster cluster_;
  proxy::RoutingTable routes_;
  std::unique_ptr<proxy::Transport> transport_;
  std::unique_ptr<proxy::EdgeProxy> edge_;
  std::unique_ptr<hub::Hub> hub_;

  std::unique_ptr<batch::BatchScheduler> scheduler_;
  std::unique_ptr<swarm::SwarmCluster> swarm_;
  std::unique_ptr<swarm::VolumeManager> volumes_;
  std::unique_ptr<storage::StoragePool> pool_;
  std::unique_ptr<k8s::Orchestrator> orchestrator_;

  std::unique_ptr<spawners::BatchSpawner> batch_spawner_;
  std::unique_ptr<spawners::SwarmSpawner> swarm_spawner_;
  std::unique_ptr<spawners::K8sSpawner> k8s_spawner_;
  hub::Spawner* spawner_ = nullptr;

  std::set<std::string> dropped_;  // sessions whose backend was dropped
};

}  // namespace hubgate::deploy
