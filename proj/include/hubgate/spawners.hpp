#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hubgate/batch.hpp"
#include "hubgate/hub.hpp"
#include "hubgate/k8s.hpp"
#include "hubgate/sim.hpp"
#include "hubgate/swarm.hpp"
#include "hubgate/volumes.hpp"

namespace hubgate::spawners {

// Logical seconds between the lifecycle steps a spawner reports.
struct Timing {
  LogicalTime schedule = 1;  // start() -> placement attempt
  LogicalTime start = 2;     // placed -> process starting
  LogicalTime ready = 5;     // starting -> backend reachable
};

void from_json(const nlohmann::json& j, Timing& t);

// Shared bookkeeping: which sessions this spawner owns and how far each got.
class TrackingSpawner : public hub::Spawner {
 public:
  TrackingSpawner(sim::VirtualCluster& cluster, hub::EventSink sink, Timing timing)
      : cluster_(cluster), sink_(std::move(sink)), timing_(timing) {}

  bool holds_resources(const std::string& session_id) const override { return tracked_.count(session_id) != 0; }

  // Session owning `username`'s backend here, if any.
  std::optional<std::string> session_of(const std::string& username) const;
  const Timing& timing() const noexcept { return timing_; }

 protected:
  enum class Stage { Admitted, Placed, Starting, Ready };

  struct Tracked {
    std::string username;
    Stage stage = Stage::Admitted;
    std::uint64_t gen = 0;  // bumps on each stage change; guards stale timers
    std::optional<NodeId> node;
    std::optional<Endpoint> backend;
  };

  Tracked* find(const std::string& session_id);
  const Tracked* find(const std::string& session_id) const;
  Tracked& track(const std::string& session_id, const std::string& username);
  void untrack(const std::string& session_id) { tracked_.erase(session_id); }

  // Runs fn after `delay` only if the session is still at the same generation.
  void later(LogicalTime delay, const std::string& session_id, const std::string& label,
             std::function<void(Tracked&)> fn);
  void emit(hub::SpawnerEvent e) { sink_(std::move(e)); }
  void emit_failed(const std::string& session_id, const std::string& reason);
  void emit_stopped_later(const std::string& session_id);
  // Backend changed under a session: BackendMoved once READY, otherwise the
  // pending BackendReady simply carries the new endpoint.
  void backend_changed(const std::string& session_id, Tracked& t, const NodeId& node, const Endpoint& backend);

  sim::VirtualCluster& cluster_;
  hub::EventSink sink_;
  Timing timing_;
  std::map<std::string, Tracked> tracked_;
};

// Sessions as batch jobs reaching the hub through reverse tunnels.
class BatchSpawner final : public TrackingSpawner {
 public:
  BatchSpawner(batch::BatchScheduler& scheduler, Endpoint hub_callback, sim::VirtualCluster& cluster,
               hub::EventSink sink, Timing timing = {});

  hub::SpawnerKind kind() const override { return hub::SpawnerKind::Batch; }
  std::optional<Resources> max_node_capacity() const override { return scheduler_.max_node_capacity(); }
  void start(const hub::SpawnRequest& request) override;
  void stop(const std::string& session_id) override;
  void release(const std::string& session_id) override;
  bool backend_alive(const std::string& session_id) const override;

  std::optional<std::uint64_t> job_of(const std::string& session_id) const;
  batch::BatchScheduler& scheduler() noexcept { return scheduler_; }

  bool on_fault(const sim::Fault& fault);
  // Queues a scheduler pass at the current time (new nodes, freed slots).
  void kick();

 private:
  void step();
  void cancel_job(const std::string& session_id);

  batch::BatchScheduler& scheduler_;
  Endpoint hub_callback_;
  std::map<std::string, std::uint64_t> jobs_;  // session -> job
  std::map<std::uint64_t, std::string> sessions_;
  bool step_pending_ = false;
};

// Sessions as single-replica services on a swarm, with per-user volumes on the
// master's shared export.
class SwarmSpawner final : public TrackingSpawner {
 public:
  static constexpr std::uint16_t kFirstPort = 32768;

  SwarmSpawner(swarm::SwarmCluster& swarm, swarm::VolumeManager& volumes, sim::VirtualCluster& cluster,
               hub::EventSink sink, Timing timing = {});

  hub::SpawnerKind kind() const override { return hub::SpawnerKind::Swarm; }
  std::optional<Resources> max_node_capacity() const override { return swarm_.max_worker_capacity(); }
  void start(const hub::SpawnRequest& request) override;
  void stop(const std::string& session_id) override;
  void release(const std::string& session_id) override;
  bool backend_alive(const std::string& session_id) const override;
  void write_user_file(const std::string& username, const std::string& name, const std::string& content) override;
  std::string read_user_file(const std::string& username, const std::string& name) const override;

  static std::string service_name(const std::string& username) { return "jupyter-" + username; }

  bool on_fault(const sim::Fault& fault);
  // Throws UnknownNode, InsufficientCapacity, MasterLost.
  std::vector<swarm::RescheduleAction> drain(const NodeId& node);

  swarm::SwarmCluster& cluster() noexcept { return swarm_; }
  swarm::VolumeManager& volumes() noexcept { return volumes_; }

 private:
  void adopt(const std::vector<swarm::RescheduleAction>& actions);
  Endpoint endpoint_for(const swarm::ContainerInstance& c);

  swarm::SwarmCluster& swarm_;
  swarm::VolumeManager& volumes_;
  std::map<std::string, std::string> by_service_;  // service -> session
  std::map<std::string, std::uint16_t> ports_;     // container -> published port
  std::uint32_t next_port_ = kFirstPort;
};

// Sessions as pods with a persistent per-user claim on the storage pool.
class K8sSpawner final : public TrackingSpawner {
 public:
  static constexpr std::uint16_t kPodPort = 8888;

  K8sSpawner(k8s::Orchestrator& orchestrator, sim::VirtualCluster& cluster, hub::EventSink sink, Timing timing = {});

  hub::SpawnerKind kind() const override { return hub::SpawnerKind::K8s; }
  std::optional<Resources> max_node_capacity() const override { return orchestrator_.max_node_capacity(); }
  void start(const hub::SpawnRequest& request) override;
  void stop(const std::string& session_id) override;
  void release(const std::string& session_id) override;
  bool backend_alive(const std::string& session_id) const override;
  // Files are a JSON object (name -> content) stored in the user's claim.
  void write_user_file(const std::string& username, const std::string& name, const std::string& content) override;
  std::string read_user_file(const std::string& username, const std::string& name) const override;

  static std::string pod_name(const std::string& username) { return "jupyter-" + username; }
  static Endpoint endpoint_for(const std::string& pod, const NodeId& node) { return {pod + "." + node.str(), kPodPort}; }

  bool on_fault(const sim::Fault& fault);
  const k8s::NodeStatus& join(const NodeId& node, Resources capacity, std::int64_t device_blocks);
  // Throws UnknownNode, InsufficientCapacity.
  std::vector<k8s::ReconcileAction> drain(const NodeId& node);
  // One reconcile pass; moved sessions get BackendMoved, stranded ones fail.
  k8s::ReconcileResult reconcile();

  k8s::Orchestrator& orchestrator() noexcept { return orchestrator_; }

 private:
  void sync(const k8s::ReconcileResult& result);
  std::map<std::string, std::string> load_files(const std::string& claim_id) const;

  k8s::Orchestrator& orchestrator_;
};

}  // namespace hubgate::spawners
