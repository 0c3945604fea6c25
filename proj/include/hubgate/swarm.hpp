#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hubgate/types.hpp"

namespace hubgate::swarm {

struct SwarmNode {
  NodeId node_id;
  bool is_master = false;
  Resources capacity;
  Resources reserved;
  bool alive = true;
  bool cordoned = false;
  int running = 0;  // RUNNING containers on this node
};

void to_json(nlohmann::json& j, const SwarmNode& n);

enum class Placement { AnySpread, MasterOnly };

struct ServiceSpec {
  std::string name;
  int replicas = 1;
  Resources limits{1, 1024};
  Placement placement = Placement::AnySpread;
  std::optional<std::string> volume;  // path of the attached user volume
};

enum class ContainerState { Running, Lost, Removed };
std::string_view container_state_name(ContainerState s) noexcept;

struct ContainerInstance {
  std::string container_id;
  std::string service;
  NodeId node_id;
  ContainerState state = ContainerState::Running;
  Resources limits;
  std::optional<std::string> volume;
};

void to_json(nlohmann::json& j, const ContainerInstance& c);

// One lost container and its replacement; `replacement` is empty when nothing
// had room for it.
struct RescheduleAction {
  std::string service;
  std::string lost_container;
  NodeId from;
  std::optional<ContainerInstance> replacement;
};

// Single-master swarm. Session services spread over workers; MASTER_ONLY
// services (hub, shared export) pin to the master. Placement is all-or-nothing
// per schedule_service call.
class SwarmCluster {
 public:
  // master == nullopt creates the master (MasterExists if one is present).
  // Otherwise it must name the current master (NoMaster). Throws DuplicateNode.
  const SwarmNode& join_node(const NodeId& id, Resources capacity, const std::optional<NodeId>& master);

  // Throws Unschedulable, MasterLost, and ConfigError for invalid specs or a
  // name already in use.
  std::vector<ContainerInstance> schedule_service(const ServiceSpec& spec);
  // Removes every container of the service. Returns false for unknown names.
  bool remove_service(const std::string& name);

  // Throws UnknownNode; MasterLost when the master is the victim. Containers on
  // the node become LOST and each is replaced through the normal placement rule.
  std::vector<RescheduleAction> handle_node_failure(const NodeId& id);
  // Dead node returns alive and empty.
  void restore_node(const NodeId& id);
  // Cordons the node and moves its containers elsewhere; atomic (throws
  // InsufficientCapacity and changes nothing if any container has no room).
  std::vector<RescheduleAction> drain_node(const NodeId& id);

  bool master_alive() const;
  const std::optional<NodeId>& master() const noexcept { return master_; }
  const std::map<NodeId, SwarmNode>& nodes() const noexcept { return nodes_; }
  const SwarmNode& node(const NodeId& id) const;
  bool has_node(const NodeId& id) const { return nodes_.count(id) != 0; }
  std::optional<Resources> max_worker_capacity() const;

  const std::map<std::string, ContainerInstance>& containers() const noexcept { return containers_; }
  std::vector<ContainerInstance> running_containers(const std::string& service) const;
  bool has_service(const std::string& name) const { return services_.count(name) != 0; }

 private:
  using Load = std::map<NodeId, std::pair<Resources, int>>;  // reserved, running count

  Load current_load() const;
  // Chooses a node for one replica against `load` and books it there.
  std::optional<NodeId> pick(const ServiceSpec& spec, Load& load, const std::optional<NodeId>& exclude) const;
  ContainerInstance launch(const ServiceSpec& spec, const NodeId& node);
  void stop_container(ContainerInstance& c, ContainerState to);
  std::vector<RescheduleAction> move_off(const NodeId& id, ContainerState lost_as);

  std::optional<NodeId> master_;
  std::map<NodeId, SwarmNode> nodes_;
  std::map<std::string, ServiceSpec> services_;
  std::map<std::string, ContainerInstance> containers_;
  std::uint64_t next_container_ = 1;
};

}  // namespace hubgate::swarm
