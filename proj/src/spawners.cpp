#include "hubgate/spawners.hpp"

#include <algorithm>
#include <cctype>

#include "hubgate/error.hpp"

namespace hubgate::spawners {

using hub::EventKind;

void from_json(const nlohmann::json& j, Timing& t) {
  t.schedule = j.value("schedule", t.schedule);
  t.start = j.value("start", t.start);
  t.ready = j.value("ready", t.ready);
  if (t.schedule < 0 || t.start < 0 || t.ready < 0) throw Error(Errc::ConfigError, "timings must be >= 0");
}

// ---- TrackingSpawner -------------------------------------------------------

std::optional<std::string> TrackingSpawner::session_of(const std::string& username) const {
  for (const auto& [id, t] : tracked_) {
    if (t.username == username) return id;
  }
  return std::nullopt;
}

TrackingSpawner::Tracked* TrackingSpawner::find(const std::string& session_id) {
  auto it = tracked_.find(session_id);
  return it == tracked_.end() ? nullptr : &it->second;
}

const TrackingSpawner::Tracked* TrackingSpawner::find(const std::string& session_id) const {
  auto it = tracked_.find(session_id);
  return it == tracked_.end() ? nullptr : &it->second;
}

TrackingSpawner::Tracked& TrackingSpawner::track(const std::string& session_id, const std::string& username) {
  auto& t = tracked_[session_id];
  t.username = username;
  return t;
}

void TrackingSpawner::later(LogicalTime delay, const std::string& session_id, const std::string& label,
                            std::function<void(Tracked&)> fn) {
  const auto* t = find(session_id);
  if (!t) return;
  const auto gen = t->gen;
  cluster_.schedule_after(delay, label + ":" + session_id, [this, session_id, gen, fn = std::move(fn)] {
    auto* now = find(session_id);
    if (now && now->gen == gen) fn(*now);
  });
}

void TrackingSpawner::emit_failed(const std::string& session_id, const std::string& reason) {
  emit({session_id, EventKind::Failed, {}, reason});
}

void TrackingSpawner::emit_stopped_later(const std::string& session_id) {
  cluster_.schedule_after(0, "stopped:" + session_id,
                          [this, session_id] { emit({session_id, EventKind::Stopped, {}, {}}); });
}

void TrackingSpawner::backend_changed(const std::string& session_id, Tracked& t, const NodeId& node,
                                      const Endpoint& backend) {
  if (t.node == node && t.backend == backend) return;
  t.node = node;
  t.backend = backend;
  if (t.stage == Stage::Ready) {
    std::string source = "spawner-" + std::string(hub::spawner_kind_name(kind()));
    std::transform(source.begin(), source.end(), source.begin(), [](unsigned char c) { return std::tolower(c); });
    cluster_.log(source, "backend_moved",
                 {{"session", session_id}, {"node", node}, {"backend", backend.to_string()}});
    emit({session_id, EventKind::BackendMoved, backend, {}});
  }
}

// ---- Batch -----------------------------------------------------------------

BatchSpawner::BatchSpawner(batch::BatchScheduler& scheduler, Endpoint hub_callback, sim::VirtualCluster& cluster,
                           hub::EventSink sink, Timing timing)
    : TrackingSpawner(cluster, std::move(sink), timing), scheduler_(scheduler), hub_callback_(std::move(hub_callback)) {}

void BatchSpawner::start(const hub::SpawnRequest& request) {
  track(request.session_id, request.user.username);
  later(timing_.schedule, request.session_id, "batch-submit", [this, request](Tracked& t) {
    std::uint64_t job = 0;
    try {
      auto script = batch::render_job_script(request.options, request.charge_account, hub_callback_,
                                             scheduler_.queues());
      job = scheduler_.submit(script, cluster_.now());
    } catch (const Error& e) {
      emit_failed(request.session_id, std::string(e.name()));
      return;
    }
    jobs_[request.session_id] = job;
    sessions_[job] = request.session_id;
    t.stage = Stage::Placed;
    ++t.gen;
    cluster_.log("spawner-batch", "job_submitted",
                 {{"session", request.session_id}, {"job", job}, {"queue", request.options.queue},
                  {"account", request.charge_account}});
    emit({request.session_id, EventKind::Scheduled, {}, {}});
    kick();
    if (const auto* q = scheduler_.find_queue(request.options.queue); q && q->min_wait > 0) {
      cluster_.schedule_after(q->min_wait, "batch-eligible", [this] { kick(); });
    }
  });
}

void BatchSpawner::kick() {
  if (step_pending_) return;
  step_pending_ = true;
  cluster_.schedule_after(0, "batch-step", [this] {
    step_pending_ = false;
    step();
  });
}

void BatchSpawner::step() {
  for (const auto& [job_id, node] : scheduler_.scheduler_step(cluster_.now())) {
    auto s = sessions_.find(job_id);
    if (s == sessions_.end()) continue;
    const auto session = s->second;
    auto* t = find(session);
    if (!t) continue;
    t->stage = Stage::Starting;
    t->node = node;
    ++t->gen;
    cluster_.log("spawner-batch", "job_started", {{"session", session}, {"job", job_id}, {"node", node}});
    emit({session, EventKind::Starting, {}, {}});

    later(timing_.start + timing_.ready, session, "batch-tunnel", [this, session, job_id](Tracked& tr) {
      try {
        auto tunnel = scheduler_.establish_tunnel(job_id, hub_callback_);
        tr.backend = Endpoint{scheduler_.hub_host(), tunnel.forwarded_port};
        tr.stage = Stage::Ready;
        ++tr.gen;
        cluster_.log("spawner-batch", "tunnel_up",
                     {{"session", session}, {"job", job_id}, {"port", tunnel.forwarded_port}});
        emit({session, EventKind::BackendReady, *tr.backend, {}});
      } catch (const Error& e) {
        emit_failed(session, std::string(e.name()));
      }
    });

    const auto walltime = scheduler_.job(job_id).walltime * 60;
    cluster_.schedule_after(walltime, "batch-walltime", [this] {
      for (auto job : scheduler_.expire(cluster_.now())) {
        auto it = sessions_.find(job);
        if (it == sessions_.end()) continue;
        const auto id = it->second;
        cluster_.log("spawner-batch", "walltime_reached", {{"session", id}, {"job", job}});
        jobs_.erase(id);
        sessions_.erase(it);
        if (auto* tr = find(id)) ++tr->gen;
        emit({id, EventKind::Stopped, {}, {}});
      }
      kick();
    });
  }
}

void BatchSpawner::cancel_job(const std::string& session_id) {
  auto it = jobs_.find(session_id);
  if (it == jobs_.end()) return;
  const auto job = it->second;
  if (!batch::is_terminal(scheduler_.job(job).state)) scheduler_.cancel(job);
  sessions_.erase(job);
  jobs_.erase(it);
  kick();
}

void BatchSpawner::stop(const std::string& session_id) {
  cancel_job(session_id);
  if (auto* t = find(session_id)) ++t->gen;
  emit_stopped_later(session_id);
}

void BatchSpawner::release(const std::string& session_id) {
  cancel_job(session_id);
  untrack(session_id);
}

bool BatchSpawner::backend_alive(const std::string& session_id) const {
  auto it = jobs_.find(session_id);
  if (it == jobs_.end()) return false;
  return scheduler_.job(it->second).state == batch::JobState::Running && scheduler_.tunnel_for(it->second);
}

std::optional<std::uint64_t> BatchSpawner::job_of(const std::string& session_id) const {
  auto it = jobs_.find(session_id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

bool BatchSpawner::on_fault(const sim::Fault& fault) {
  if (fault.kind == sim::FaultKind::DropBackend || !scheduler_.has_node(fault.target)) return false;
  if (fault.kind == sim::FaultKind::RestoreNode) {
    scheduler_.restore_node(fault.target);
    kick();
    return true;
  }
  for (auto job : scheduler_.lose_node(fault.target)) {
    auto it = sessions_.find(job);
    if (it == sessions_.end()) continue;
    emit_failed(it->second, "NodeLost");
  }
  return true;
}

// ---- Swarm -----------------------------------------------------------------

SwarmSpawner::SwarmSpawner(swarm::SwarmCluster& swarm, swarm::VolumeManager& volumes, sim::VirtualCluster& cluster,
                           hub::EventSink sink, Timing timing)
    : TrackingSpawner(cluster, std::move(sink), timing), swarm_(swarm), volumes_(volumes) {}

Endpoint SwarmSpawner::endpoint_for(const swarm::ContainerInstance& c) {
  auto [it, fresh] = ports_.try_emplace(c.container_id, 0);
  if (fresh) {
    it->second = static_cast<std::uint16_t>(kFirstPort + (next_port_ - kFirstPort) % 32000);
    ++next_port_;
  }
  return {c.node_id.str(), it->second};
}

void SwarmSpawner::start(const hub::SpawnRequest& request) {
  track(request.session_id, request.user.username);
  later(timing_.schedule, request.session_id, "swarm-place", [this, request](Tracked& t) {
    const auto service = service_name(request.user.username);
    std::vector<swarm::ContainerInstance> placed;
    try {
      auto volume = volumes_.ensure_user_volume(request.user.username);
      placed = swarm_.schedule_service(
          {service, 1, request.options.resources(), swarm::Placement::AnySpread, volume.path});
    } catch (const Error& e) {
      emit_failed(request.session_id, std::string(e.name()));
      return;
    }
    by_service_[service] = request.session_id;
    t.stage = Stage::Placed;
    t.node = placed.front().node_id;
    t.backend = endpoint_for(placed.front());
    ++t.gen;
    cluster_.log("spawner-swarm", "service_placed",
                 {{"session", request.session_id}, {"service", service}, {"node", placed.front().node_id}});
    emit({request.session_id, EventKind::Scheduled, {}, {}});

    later(timing_.start, request.session_id, "swarm-start", [this, id = request.session_id](Tracked& t2) {
      t2.stage = Stage::Starting;
      ++t2.gen;
      emit({id, EventKind::Starting, {}, {}});
      later(timing_.ready, id, "swarm-ready", [this, id](Tracked& t3) {
        t3.stage = Stage::Ready;
        ++t3.gen;
        emit({id, EventKind::BackendReady, *t3.backend, {}});
      });
    });
  });
}

void SwarmSpawner::stop(const std::string& session_id) {
  if (auto* t = find(session_id)) {
    ++t->gen;
    const auto service = service_name(t->username);
    swarm_.remove_service(service);
    by_service_.erase(service);
  }
  emit_stopped_later(session_id);
}

void SwarmSpawner::release(const std::string& session_id) {
  if (const auto* t = find(session_id)) {
    const auto service = service_name(t->username);
    if (auto it = by_service_.find(service); it != by_service_.end() && it->second == session_id) {
      swarm_.remove_service(service);
      by_service_.erase(it);
    }
  }
  untrack(session_id);
}

bool SwarmSpawner::backend_alive(const std::string& session_id) const {
  const auto* t = find(session_id);
  if (!t || !t->node) return false;
  for (const auto& c : swarm_.running_containers(service_name(t->username))) {
    if (c.node_id == *t->node) return swarm_.node(c.node_id).alive;
  }
  return false;
}

void SwarmSpawner::adopt(const std::vector<swarm::RescheduleAction>& actions) {
  for (const auto& a : actions) {
    auto it = by_service_.find(a.service);
    if (it == by_service_.end()) continue;
    const auto session = it->second;
    auto* t = find(session);
    if (!t) continue;
    if (!a.replacement) {
      emit_failed(session, "Unschedulable");
      continue;
    }
    backend_changed(session, *t, a.replacement->node_id, endpoint_for(*a.replacement));
  }
}

bool SwarmSpawner::on_fault(const sim::Fault& fault) {
  if (fault.kind == sim::FaultKind::DropBackend || !swarm_.has_node(fault.target)) return false;
  if (fault.kind == sim::FaultKind::RestoreNode) {
    swarm_.restore_node(fault.target);
    return true;
  }
  try {
    adopt(swarm_.handle_node_failure(fault.target));
  } catch (const Error& e) {
    if (e.code() != Errc::MasterLost) throw;
    // Workers keep serving; nothing new can be placed until the master returns.
    cluster_.log("spawner-swarm", "master_lost", {{"node", fault.target}});
  }
  return true;
}

std::vector<swarm::RescheduleAction> SwarmSpawner::drain(const NodeId& node) {
  auto actions = swarm_.drain_node(node);
  adopt(actions);
  return actions;
}

void SwarmSpawner::write_user_file(const std::string& username, const std::string& name, const std::string& content) {
  volumes_.write_file(username, name, content);
}

std::string SwarmSpawner::read_user_file(const std::string& username, const std::string& name) const {
  return volumes_.read_file(username, name);
}

// ---- K8s -------------------------------------------------------------------

K8sSpawner::K8sSpawner(k8s::Orchestrator& orchestrator, sim::VirtualCluster& cluster, hub::EventSink sink,
                       Timing timing)
    : TrackingSpawner(cluster, std::move(sink), timing), orchestrator_(orchestrator) {}

void K8sSpawner::start(const hub::SpawnRequest& request) {
  track(request.session_id, request.user.username);
  later(timing_.schedule, request.session_id, "k8s-place", [this, request](Tracked& t) {
    const auto& user = request.user.username;
    const auto pod = pod_name(user);
    auto& pool = orchestrator_.pool();
    std::string claim_id;
    try {
      auto claim = pool.find_claim_by_owner(user);
      if (!claim) claim = pool.claim_volume(request.options.disk_quota, user);
      claim_id = claim->claim_id;
    } catch (const Error& e) {
      emit_failed(request.session_id, std::string(e.name()));
      return;
    }
    const auto claim_size = pool.claim(claim_id).size;
    orchestrator_.upsert_pod({pod, {request.options.cpus, request.options.memory, claim_size}, claim_id,
                              request.session_id});
    auto result = orchestrator_.reconcile_pass();
    auto node = orchestrator_.node_of(pod);
    if (!node) {
      orchestrator_.remove_pod(pod);
      sync(result);
      emit_failed(request.session_id, "Unschedulable");
      return;
    }
    t.stage = Stage::Placed;
    t.node = *node;
    t.backend = endpoint_for(pod, *node);
    ++t.gen;
    cluster_.log("spawner-k8s", "pod_bound",
                 {{"session", request.session_id}, {"pod", pod}, {"node", *node}, {"claim", claim_id}});
    emit({request.session_id, EventKind::Scheduled, {}, {}});
    sync(result);

    later(timing_.start, request.session_id, "k8s-start", [this, id = request.session_id](Tracked& t2) {
      t2.stage = Stage::Starting;
      ++t2.gen;
      emit({id, EventKind::Starting, {}, {}});
      later(timing_.ready, id, "k8s-ready", [this, id](Tracked& t3) {
        t3.stage = Stage::Ready;
        ++t3.gen;
        emit({id, EventKind::BackendReady, *t3.backend, {}});
      });
    });
  });
}

void K8sSpawner::sync(const k8s::ReconcileResult& result) {
  std::set<std::string> stranded;
  for (const auto& u : result.unschedulable) stranded.insert(u.pod);
  const auto& observed = orchestrator_.observed();
  std::vector<std::pair<std::string, std::string>> failures;
  for (auto& [id, t] : tracked_) {
    if (t.stage == Stage::Admitted) continue;
    const auto pod = pod_name(t.username);
    auto bound = observed.pods.find(pod);
    bool usable = false;
    if (bound != observed.pods.end()) {
      const auto& n = observed.nodes.at(bound->second.node);
      usable = n.alive;
      if (usable) backend_changed(id, t, bound->second.node, endpoint_for(pod, bound->second.node));
    }
    if (!usable && (stranded.count(pod) || bound == observed.pods.end())) failures.emplace_back(id, "Unschedulable");
  }
  for (const auto& [id, why] : failures) emit_failed(id, why);
}

k8s::ReconcileResult K8sSpawner::reconcile() {
  auto result = orchestrator_.reconcile_pass();
  sync(result);
  return result;
}

void K8sSpawner::stop(const std::string& session_id) {
  if (auto* t = find(session_id)) {
    ++t->gen;
    orchestrator_.remove_pod(pod_name(t->username));
    orchestrator_.reconcile_pass();
  }
  emit_stopped_later(session_id);
}

void K8sSpawner::release(const std::string& session_id) {
  const auto* t = find(session_id);
  if (!t) return;
  const auto pod = pod_name(t->username);
  untrack(session_id);
  auto it = orchestrator_.desired().pods.find(pod);
  if (it != orchestrator_.desired().pods.end() && it->second.owner == session_id) {
    orchestrator_.remove_pod(pod);
    reconcile();
  }
}

bool K8sSpawner::backend_alive(const std::string& session_id) const {
  const auto* t = find(session_id);
  if (!t || !t->node) return false;
  auto bound = orchestrator_.observed().pods.find(pod_name(t->username));
  if (bound == orchestrator_.observed().pods.end() || bound->second.node != *t->node) return false;
  return orchestrator_.observed().nodes.at(*t->node).alive;
}

bool K8sSpawner::on_fault(const sim::Fault& fault) {
  if (fault.kind == sim::FaultKind::DropBackend) return false;
  if (!orchestrator_.observed().nodes.count(fault.target)) return false;
  if (fault.kind == sim::FaultKind::KillNode) {
    auto report = orchestrator_.fail_node(fault.target);
    cluster_.log("storage", "device_lost",
                 {{"node", fault.target}, {"affected", report.affected_blocks}, {"moved", report.moved_blocks},
                  {"lost", report.lost_blocks}, {"health", storage::health_name(report.health)}});
  } else {
    orchestrator_.restore_node(fault.target);
  }
  reconcile();
  return true;
}

const k8s::NodeStatus& K8sSpawner::join(const NodeId& node, Resources capacity, std::int64_t device_blocks) {
  const auto& status = orchestrator_.join_node(node, capacity, device_blocks);
  reconcile();
  return status;
}

std::vector<k8s::ReconcileAction> K8sSpawner::drain(const NodeId& node) {
  auto actions = orchestrator_.drain_node(node);
  sync({});
  return actions;
}

std::map<std::string, std::string> K8sSpawner::load_files(const std::string& claim_id) const {
  const auto raw = orchestrator_.pool().read_claim_data(claim_id);
  if (raw.empty()) return {};
  try {
    return nlohmann::json::parse(raw).get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ChecksumMismatch, claim_id + ": unreadable file table: " + e.what());
  }
}

void K8sSpawner::write_user_file(const std::string& username, const std::string& name, const std::string& content) {
  auto& pool = orchestrator_.pool();
  auto claim = pool.find_claim_by_owner(username);
  if (!claim) throw Error(Errc::UnknownVolume, username);
  auto files = load_files(claim->claim_id);
  files[name] = content;
  pool.write_claim_data(claim->claim_id, nlohmann::json(files).dump());
}

std::string K8sSpawner::read_user_file(const std::string& username, const std::string& name) const {
  auto claim = orchestrator_.pool().find_claim_by_owner(username);
  if (!claim) throw Error(Errc::UnknownVolume, username);
  auto files = load_files(claim->claim_id);
  auto it = files.find(name);
  if (it == files.end()) throw Error(Errc::UnknownTarget, name);
  return it->second;
}

}  // namespace hubgate::spawners
