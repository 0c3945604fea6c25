#include "hubgate/k8s.hpp"

#include <algorithm>

#include "hubgate/error.hpp"

namespace hubgate::k8s {

void to_json(nlohmann::json& j, const PodSpec& p) {
  j = {{"name", p.name},
       {"limits", {{"cpus", p.limits.cpus}, {"memory", p.limits.memory}, {"disk", p.limits.disk}}},
       {"owner", p.owner}};
  j["claim"] = p.claim ? nlohmann::json(*p.claim) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, PodSpec& p) {
  try {
    j.at("name").get_to(p.name);
    if (auto l = j.find("limits"); l != j.end()) {
      p.limits.cpus = l->value("cpus", p.limits.cpus);
      p.limits.memory = l->value("memory", p.limits.memory);
      p.limits.disk = l->value("disk", p.limits.disk);
    }
    p.owner = j.value("owner", std::string(kSystemOwner));
    if (auto c = j.find("claim"); c != j.end() && !c->is_null()) p.claim = c->get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("bad pod spec: ") + e.what());
  }
  if (p.name.empty()) throw Error(Errc::ConfigError, "pod without a name");
  if (p.limits.cpus <= 0 || p.limits.memory <= 0 || p.limits.disk <= 0) {
    throw Error(Errc::ConfigError, "pod " + p.name + ": limits must be positive");
  }
}

void to_json(nlohmann::json& j, const NodeStatus& n) {
  j = {{"node_id", n.node_id},   {"capacity", n.capacity}, {"reserved", n.reserved},
       {"cordoned", n.cordoned}, {"alive", n.alive},       {"pods", n.pods}};
}

void to_json(nlohmann::json& j, const ObservedState& s) {
  j = {{"nodes", nlohmann::json::array()}, {"pods", nlohmann::json::object()}};
  for (const auto& [_, n] : s.nodes) j["nodes"].push_back(n);
  for (const auto& [name, b] : s.pods) j["pods"][name] = {{"node", b.node}, {"spec", b.spec}};
}

DesiredState parse_manifest(const nlohmann::json& j) {
  const auto* pods = &j;
  if (j.is_object()) {
    auto it = j.find("pods");
    if (it == j.end()) throw Error(Errc::ConfigError, "manifest has no 'pods'");
    pods = &*it;
  }
  if (!pods->is_array()) throw Error(Errc::ConfigError, "'pods' must be an array");
  DesiredState d;
  for (const auto& item : *pods) {
    auto spec = item.get<PodSpec>();
    auto name = spec.name;
    if (!d.pods.emplace(name, std::move(spec)).second) {
      throw Error(Errc::ConfigError, "duplicate pod " + name);
    }
  }
  return d;
}

void to_json(nlohmann::json& j, const DesiredState& d) {
  j = {{"pods", nlohmann::json::array()}};
  for (const auto& [_, p] : d.pods) j["pods"].push_back(p);
}

std::string_view action_name(ActionKind k) noexcept {
  switch (k) {
    case ActionKind::Create: return "CREATE";
    case ActionKind::Delete: return "DELETE";
    case ActionKind::Migrate: return "MIGRATE";
  }
  return "?";
}

void to_json(nlohmann::json& j, const ReconcileAction& a) {
  j = {{"kind", action_name(a.kind)}, {"pod", a.pod}};
  if (!a.to.empty()) j["to"] = a.to;
  if (!a.from.empty()) j["from"] = a.from;
  if (!a.reason.empty()) j["reason"] = a.reason;
}

void to_json(nlohmann::json& j, const ReconcileResult& r) {
  j = {{"actions", r.actions}, {"unschedulable", nlohmann::json::array()}};
  for (const auto& u : r.unschedulable) j["unschedulable"].push_back({{"pod", u.pod}, {"reason", u.reason}});
}

namespace {

struct Load {
  Resources capacity;
  Resources reserved;
  std::size_t pods = 0;
  bool eligible = false;
};

using LoadMap = std::map<NodeId, Load>;

LoadMap load_of(const ObservedState& s) {
  LoadMap m;
  for (const auto& [id, n] : s.nodes) m[id] = {n.capacity, n.reserved, n.pods.size(), n.alive && !n.cordoned};
  return m;
}

bool node_usable(const ObservedState& s, const NodeId& id) {
  auto it = s.nodes.find(id);
  return it != s.nodes.end() && it->second.alive && !it->second.cordoned;
}

std::optional<NodeId> pick(const LoadMap& load, const Resources& need, const NodeId& exclude = {}) {
  std::optional<NodeId> best;
  std::size_t best_pods = 0;
  for (const auto& [id, l] : load) {  // ascending id, so strict < keeps the lowest on ties
    if (!l.eligible || id == exclude) continue;
    if (!(l.reserved + need).fits_within(l.capacity)) continue;
    if (!best || l.pods < best_pods) {
      best = id;
      best_pods = l.pods;
    }
  }
  return best;
}

void take(LoadMap& load, const NodeId& id, const Resources& r) {
  auto& l = load[id];
  l.reserved += r;
  ++l.pods;
}

void give(LoadMap& load, const NodeId& id, const Resources& r) {
  auto it = load.find(id);
  if (it == load.end()) return;
  it->second.reserved -= r;
  --it->second.pods;
}

std::string no_fit(const PodSpec& p) {
  return "no schedulable node fits cpus=" + std::to_string(p.limits.cpus) +
         " memory=" + std::to_string(p.limits.memory);
}

void bind(ObservedState& s, const PodSpec& spec, const NodeId& node) {
  auto& n = s.nodes.at(node);
  n.pods.insert(spec.name);
  n.reserved += spec.limits.resources();
  s.pods[spec.name] = {spec, node};
}

void unbind(ObservedState& s, const std::string& pod) {
  auto it = s.pods.find(pod);
  if (it == s.pods.end()) return;
  if (auto n = s.nodes.find(it->second.node); n != s.nodes.end()) {
    n->second.pods.erase(pod);
    n->second.reserved -= it->second.spec.limits.resources();
  }
  s.pods.erase(it);
}

}  // namespace

ReconcileResult reconcile(const DesiredState& desired, const ObservedState& observed) {
  ReconcileResult out;
  LoadMap load = load_of(observed);
  std::vector<std::string> to_create;

  for (const auto& [name, bound] : observed.pods) {
    auto want = desired.pods.find(name);
    if (want == desired.pods.end()) {
      out.actions.push_back({ActionKind::Delete, name, {}, bound.node, "not desired"});
      give(load, bound.node, bound.spec.limits.resources());
    } else if (!(want->second == bound.spec)) {
      out.actions.push_back({ActionKind::Delete, name, {}, bound.node, "spec changed"});
      give(load, bound.node, bound.spec.limits.resources());
      to_create.push_back(name);
    }
  }

  for (const auto& [name, bound] : observed.pods) {
    auto want = desired.pods.find(name);
    if (want == desired.pods.end() || !(want->second == bound.spec)) continue;
    if (node_usable(observed, bound.node)) continue;
    const auto need = bound.spec.limits.resources();
    if (auto to = pick(load, need, bound.node)) {
      auto src = observed.nodes.find(bound.node);
      std::string why = src == observed.nodes.end() ? "node gone" : !src->second.alive ? "node dead" : "node cordoned";
      out.actions.push_back({ActionKind::Migrate, name, *to, bound.node, std::move(why)});
      give(load, bound.node, need);
      take(load, *to, need);
    } else {
      out.unschedulable.push_back({name, no_fit(bound.spec)});
    }
  }

  for (const auto& [name, _] : desired.pods) {
    if (!observed.pods.count(name)) to_create.push_back(name);
  }
  std::sort(to_create.begin(), to_create.end());
  for (const auto& name : to_create) {
    const auto& spec = desired.pods.at(name);
    if (auto to = pick(load, spec.limits.resources())) {
      out.actions.push_back({ActionKind::Create, name, *to, {}, {}});
      take(load, *to, spec.limits.resources());
    } else {
      out.unschedulable.push_back({name, no_fit(spec)});
    }
  }
  return out;
}

void apply(const std::vector<ReconcileAction>& actions, const DesiredState& desired, ObservedState& observed) {
  for (const auto& a : actions) {
    switch (a.kind) {
      case ActionKind::Delete:
        unbind(observed, a.pod);
        break;
      case ActionKind::Create:
        bind(observed, desired.pods.at(a.pod), a.to);
        break;
      case ActionKind::Migrate: {
        auto spec = observed.pods.at(a.pod).spec;
        unbind(observed, a.pod);
        bind(observed, spec, a.to);
        break;
      }
    }
  }
}

const NodeStatus& Orchestrator::join_node(const NodeId& id, Resources capacity, std::int64_t device_capacity) {
  if (id.empty()) throw Error(Errc::ConfigError, "empty node id");
  if (observed_.nodes.count(id)) throw Error(Errc::DuplicateNode, id.str());
  if (capacity.cpus <= 0 || capacity.memory <= 0) throw Error(Errc::ConfigError, id.str() + ": capacity must be positive");
  pool_.add_device(id, device_capacity);
  auto& n = observed_.nodes[id];
  n.node_id = id;
  n.capacity = capacity;
  pool_.rebalance();
  return n;
}

std::vector<ReconcileAction> Orchestrator::drain_node(const NodeId& id) {
  auto it = observed_.nodes.find(id);
  if (it == observed_.nodes.end()) throw Error(Errc::UnknownNode, id.str());

  // Dry run against a scratch load map; nothing is touched until every pod has a home.
  LoadMap load = load_of(observed_);
  load[id].eligible = false;
  std::vector<ReconcileAction> plan;
  for (const auto& pod : it->second.pods) {
    const auto& spec = observed_.pods.at(pod).spec;
    auto to = pick(load, spec.limits.resources());
    if (!to) {
      throw Error(Errc::InsufficientCapacity, "cannot drain " + id.str() + ": pod " + pod + " has nowhere to go");
    }
    take(load, *to, spec.limits.resources());
    plan.push_back({ActionKind::Migrate, pod, *to, id, "drain"});
  }

  it->second.cordoned = true;
  apply(plan, desired_, observed_);
  return plan;
}

storage::RebalanceReport Orchestrator::remove_node(const NodeId& id) {
  auto it = observed_.nodes.find(id);
  if (it == observed_.nodes.end()) throw Error(Errc::UnknownNode, id.str());
  if (!it->second.pods.empty()) {
    throw Error(Errc::InsufficientCapacity, id.str() + " still runs " + std::to_string(it->second.pods.size()) +
                                                " pods; drain it first");
  }
  observed_.nodes.erase(it);
  if (!pool_.has_device(id)) return {id};
  return pool_.handle_device_loss(id);
}

storage::RebalanceReport Orchestrator::fail_node(const NodeId& id) {
  auto it = observed_.nodes.find(id);
  if (it == observed_.nodes.end()) throw Error(Errc::UnknownNode, id.str());
  it->second.alive = false;
  return pool_.handle_device_loss(id);
}

void Orchestrator::restore_node(const NodeId& id) {
  auto it = observed_.nodes.find(id);
  if (it == observed_.nodes.end()) throw Error(Errc::UnknownNode, id.str());
  const auto stale = it->second.pods;
  for (const auto& pod : stale) unbind(observed_, pod);
  it->second.alive = true;
  it->second.cordoned = false;
  pool_.restore_device(id);
  pool_.rebalance();
}

void Orchestrator::upsert_pod(PodSpec spec) {
  auto name = spec.name;
  desired_.pods[name] = std::move(spec);
}

bool Orchestrator::remove_pod(const std::string& name) { return desired_.pods.erase(name) != 0; }

void Orchestrator::apply_manifest(const DesiredState& manifest) {
  for (const auto& [name, spec] : manifest.pods) desired_.pods[name] = spec;
}

ReconcileResult Orchestrator::reconcile_pass() {
  auto result = reconcile(desired_, observed_);
  apply(result.actions, desired_, observed_);
  return result;
}

std::optional<NodeId> Orchestrator::node_of(const std::string& pod) const {
  auto it = observed_.pods.find(pod);
  if (it == observed_.pods.end()) return std::nullopt;
  return it->second.node;
}

std::optional<Resources> Orchestrator::max_node_capacity() const {
  std::optional<Resources> best;
  for (const auto& [_, n] : observed_.nodes) {
    if (!best) {
      best = n.capacity;
    } else {
      best->cpus = std::max(best->cpus, n.capacity.cpus);
      best->memory = std::max(best->memory, n.capacity.memory);
    }
  }
  return best;
}

}  // namespace hubgate::k8s
