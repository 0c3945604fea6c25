#include "hubgate/swarm.hpp"

#include <cstdio>

#include "hubgate/error.hpp"

namespace hubgate::swarm {

void to_json(nlohmann::json& j, const SwarmNode& n) {
  j = {{"node_id", n.node_id},   {"is_master", n.is_master}, {"capacity", n.capacity}, {"reserved", n.reserved},
       {"alive", n.alive},       {"cordoned", n.cordoned},   {"running", n.running}};
}

std::string_view container_state_name(ContainerState s) noexcept {
  switch (s) {
    case ContainerState::Running: return "RUNNING";
    case ContainerState::Lost: return "LOST";
    case ContainerState::Removed: return "REMOVED";
  }
  return "?";
}

void to_json(nlohmann::json& j, const ContainerInstance& c) {
  j = {{"container_id", c.container_id},
       {"service", c.service},
       {"node_id", c.node_id},
       {"state", container_state_name(c.state)},
       {"limits", c.limits},
       {"volume", c.volume ? nlohmann::json(*c.volume) : nlohmann::json(nullptr)}};
}

const SwarmNode& SwarmCluster::join_node(const NodeId& id, Resources capacity, const std::optional<NodeId>& master) {
  if (nodes_.count(id)) throw Error(Errc::DuplicateNode, id.str());
  if (capacity.cpus < 1 || capacity.memory < 1) throw Error(Errc::ConfigError, "node capacity must be positive");
  SwarmNode node{id, false, capacity, {}, true, false, 0};
  if (!master) {
    if (master_) throw Error(Errc::MasterExists, master_->str());
    node.is_master = true;
    master_ = id;
  } else if (!master_ || *master_ != *master) {
    throw Error(Errc::NoMaster, "no master at " + master->str());
  }
  return nodes_.emplace(id, node).first->second;
}

bool SwarmCluster::master_alive() const {
  return master_ && nodes_.at(*master_).alive;
}

const SwarmNode& SwarmCluster::node(const NodeId& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(Errc::UnknownNode, id.str());
  return it->second;
}

std::optional<Resources> SwarmCluster::max_worker_capacity() const {
  std::optional<Resources> best;
  for (const auto& [_, n] : nodes_) {
    if (n.is_master) continue;
    if (!best) {
      best = n.capacity;
    } else {
      best->cpus = std::max(best->cpus, n.capacity.cpus);
      best->memory = std::max(best->memory, n.capacity.memory);
    }
  }
  return best;
}

SwarmCluster::Load SwarmCluster::current_load() const {
  Load load;
  for (const auto& [id, n] : nodes_) load[id] = {n.reserved, n.running};
  return load;
}

std::optional<NodeId> SwarmCluster::pick(const ServiceSpec& spec, Load& load,
                                         const std::optional<NodeId>& exclude) const {
  const NodeId* best = nullptr;
  int best_count = 0;
  for (const auto& [id, n] : nodes_) {
    if (!n.alive || n.cordoned || (exclude && *exclude == id)) continue;
    if ((spec.placement == Placement::MasterOnly) != n.is_master) continue;
    const auto& [reserved, count] = load.at(id);
    if (!(reserved + spec.limits).fits_within(n.capacity)) continue;
    if (!best || count < best_count) {
      best = &id;
      best_count = count;
    }
  }
  if (!best) return std::nullopt;
  auto& slot = load.at(*best);
  slot.first += spec.limits;
  ++slot.second;
  return *best;
}

ContainerInstance SwarmCluster::launch(const ServiceSpec& spec, const NodeId& node_id) {
  char id[24];
  std::snprintf(id, sizeof id, "c%06llu", static_cast<unsigned long long>(next_container_++));
  ContainerInstance c{id, spec.name, node_id, ContainerState::Running, spec.limits, spec.volume};
  auto& node = nodes_.at(node_id);
  node.reserved += spec.limits;
  ++node.running;
  containers_.emplace(c.container_id, c);
  return c;
}

void SwarmCluster::stop_container(ContainerInstance& c, ContainerState to) {
  if (c.state == ContainerState::Running) {
    auto& node = nodes_.at(c.node_id);
    node.reserved -= c.limits;
    --node.running;
  }
  c.state = to;
}

std::vector<ContainerInstance> SwarmCluster::schedule_service(const ServiceSpec& spec) {
  if (spec.name.empty() || spec.replicas < 1 || spec.limits.cpus < 1 || spec.limits.memory < 1) {
    throw Error(Errc::ConfigError, "invalid service spec '" + spec.name + "'");
  }
  if (services_.count(spec.name)) throw Error(Errc::ConfigError, "service '" + spec.name + "' exists");
  if (!master_) throw Error(Errc::NoMaster, "swarm has no master");
  if (!master_alive()) throw Error(Errc::MasterLost, "control plane is down");

  Load load = current_load();
  std::vector<NodeId> targets;
  for (int r = 0; r < spec.replicas; ++r) {
    auto node = pick(spec, load, std::nullopt);
    if (!node) {
      throw Error(Errc::Unschedulable, spec.name + ": no node fits replica " + std::to_string(r + 1) + " of " +
                                           std::to_string(spec.replicas));
    }
    targets.push_back(*node);
  }
  services_.emplace(spec.name, spec);
  std::vector<ContainerInstance> placed;
  for (const auto& node : targets) placed.push_back(launch(spec, node));
  return placed;
}

bool SwarmCluster::remove_service(const std::string& name) {
  if (services_.erase(name) == 0) return false;
  for (auto& [_, c] : containers_) {
    if (c.service == name && c.state == ContainerState::Running) stop_container(c, ContainerState::Removed);
  }
  return true;
}

std::vector<ContainerInstance> SwarmCluster::running_containers(const std::string& service) const {
  std::vector<ContainerInstance> out;
  for (const auto& [_, c] : containers_) {
    if (c.service == service && c.state == ContainerState::Running) out.push_back(c);
  }
  return out;
}

std::vector<RescheduleAction> SwarmCluster::move_off(const NodeId& id, ContainerState lost_as) {
  std::vector<std::string> victims;
  for (const auto& [cid, c] : containers_) {
    if (c.node_id == id && c.state == ContainerState::Running) victims.push_back(cid);
  }
  std::vector<RescheduleAction> actions;
  for (const auto& cid : victims) {
    auto& c = containers_.at(cid);
    stop_container(c, lost_as);
    RescheduleAction action{c.service, cid, id, std::nullopt};
    if (master_alive()) {
      const auto& spec = services_.at(c.service);
      Load load = current_load();
      if (auto target = pick(spec, load, id)) action.replacement = launch(spec, *target);
    }
    actions.push_back(std::move(action));
  }
  return actions;
}

std::vector<RescheduleAction> SwarmCluster::handle_node_failure(const NodeId& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(Errc::UnknownNode, id.str());
  if (!it->second.alive) return {};
  it->second.alive = false;
  auto actions = move_off(id, ContainerState::Lost);
  if (it->second.is_master) throw Error(Errc::MasterLost, "master " + id.str() + " failed");
  return actions;
}

void SwarmCluster::restore_node(const NodeId& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(Errc::UnknownNode, id.str());
  it->second.alive = true;
  it->second.cordoned = false;
}

std::vector<RescheduleAction> SwarmCluster::drain_node(const NodeId& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(Errc::UnknownNode, id.str());
  if (!master_alive()) throw Error(Errc::MasterLost, "control plane is down");
  // Dry run on a copy of the load with the node excluded.
  Load load = current_load();
  for (const auto& [_, c] : containers_) {
    if (c.node_id != id || c.state != ContainerState::Running) continue;
    if (!pick(services_.at(c.service), load, id)) {
      throw Error(Errc::InsufficientCapacity, "no room for " + c.container_id + " off " + id.str());
    }
  }
  it->second.cordoned = true;
  return move_off(id, ContainerState::Removed);
}

}  // namespace hubgate::swarm
