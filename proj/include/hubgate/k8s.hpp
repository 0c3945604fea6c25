#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hubgate/storage.hpp"
#include "hubgate/types.hpp"

namespace hubgate::k8s {

inline constexpr const char* kSystemOwner = "system";

struct PodLimits {
  std::int64_t cpus = 1;
  MiB memory = 1024;
  MiB disk = 1;

  Resources resources() const { return {cpus, memory}; }
  friend bool operator==(const PodLimits&, const PodLimits&) = default;
};

struct PodSpec {
  std::string name;
  PodLimits limits;
  std::optional<std::string> claim;  // VolumeClaim id
  std::string owner = kSystemOwner;  // session id, or "system" for hub / edge-proxy pods

  bool is_system() const { return owner == kSystemOwner; }
  friend bool operator==(const PodSpec&, const PodSpec&) = default;
};

void to_json(nlohmann::json& j, const PodSpec& p);
// Throws ConfigError on missing names or non-positive limits.
void from_json(const nlohmann::json& j, PodSpec& p);

struct NodeStatus {
  NodeId node_id;
  Resources capacity;
  bool cordoned = false;
  bool alive = true;
  std::set<std::string> pods;
  Resources reserved;

  friend bool operator==(const NodeStatus&, const NodeStatus&) = default;
};

void to_json(nlohmann::json& j, const NodeStatus& n);

struct BoundPod {
  PodSpec spec;
  NodeId node;
  friend bool operator==(const BoundPod&, const BoundPod&) = default;
};

struct ObservedState {
  std::map<NodeId, NodeStatus> nodes;
  std::map<std::string, BoundPod> pods;

  friend bool operator==(const ObservedState&, const ObservedState&) = default;
};

void to_json(nlohmann::json& j, const ObservedState& s);

struct DesiredState {
  std::map<std::string, PodSpec> pods;
};

// {"pods": [PodSpec, ...]}. Throws ConfigError on duplicate names.
DesiredState parse_manifest(const nlohmann::json& j);
void to_json(nlohmann::json& j, const DesiredState& d);

enum class ActionKind { Create, Delete, Migrate };
std::string_view action_name(ActionKind k) noexcept;

struct ReconcileAction {
  ActionKind kind;
  std::string pod;
  NodeId to;    // Create / Migrate target
  NodeId from;  // Migrate source, Delete location
  std::string reason;

  friend bool operator==(const ReconcileAction&, const ReconcileAction&) = default;
};

void to_json(nlohmann::json& j, const ReconcileAction& a);

struct Unschedulable {
  std::string pod;
  std::string reason;
};

struct ReconcileResult {
  std::vector<ReconcileAction> actions;
  std::vector<Unschedulable> unschedulable;
};

void to_json(nlohmann::json& j, const ReconcileResult& r);

// Level-triggered diff of desired against observed. Order: DELETE (absent from
// desired, or spec changed), then MIGRATE (bound to a cordoned, dead or missing
// node), then CREATE; pods by name within each group. Placement picks the alive
// uncordoned node with the fewest pods that fits the pod's limits, lowest id on
// ties, accounting for earlier actions in the same pass.
ReconcileResult reconcile(const DesiredState& desired, const ObservedState& observed);

// Applies actions produced by reconcile() for the same (desired, observed).
void apply(const std::vector<ReconcileAction>& actions, const DesiredState& desired, ObservedState& observed);

// Cluster state holder wiring node lifecycle to the storage pool.
class Orchestrator {
 public:
  explicit Orchestrator(storage::StoragePool& pool) : pool_(pool) {}

  // Registers the node and its storage device. Throws DuplicateNode.
  const NodeStatus& join_node(const NodeId& id, Resources capacity, std::int64_t device_capacity);
  // Cordons the node and migrates all its pods; atomic. Throws UnknownNode,
  // InsufficientCapacity.
  std::vector<ReconcileAction> drain_node(const NodeId& id);
  // Drops a drained (cordoned, empty) node; its device leaves the pool.
  storage::RebalanceReport remove_node(const NodeId& id);
  // Node death: pods stay bound until the next pass migrates them.
  storage::RebalanceReport fail_node(const NodeId& id);
  // Node comes back alive and empty; pods still bound to it are unbound.
  void restore_node(const NodeId& id);

  void upsert_pod(PodSpec spec);
  bool remove_pod(const std::string& name);
  void apply_manifest(const DesiredState& manifest);

  // reconcile() + apply() in one serialized pass.
  ReconcileResult reconcile_pass();

  const DesiredState& desired() const noexcept { return desired_; }
  const ObservedState& observed() const noexcept { return observed_; }
  std::optional<NodeId> node_of(const std::string& pod) const;
  std::optional<Resources> max_node_capacity() const;
  storage::StoragePool& pool() noexcept { return pool_; }
  const storage::StoragePool& pool() const noexcept { return pool_; }

 private:
  storage::StoragePool& pool_;
  DesiredState desired_;
  ObservedState observed_;
};

}  // namespace hubgate::k8s
