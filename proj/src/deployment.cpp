#include "hubgate/deployment.hpp"

#include <algorithm>

#include "hubgate/error.hpp"

namespace hubgate::deploy {

using nlohmann::json;

void from_json(const json& j, NodeConfig& n) {
  n.id = NodeId(j.at("id").get<std::string>());
  n.capacity.cpus = j.value("cpus", n.capacity.cpus);
  n.capacity.memory = j.value("memory", n.capacity.memory);
  n.slots = j.value("slots", n.slots);
  n.master = j.value("master", n.master);
  n.device_blocks = j.value("device_blocks", n.device_blocks);
}

void to_json(json& j, const NodeConfig& n) {
  j = {{"id", n.id},       {"cpus", n.capacity.cpus}, {"memory", n.capacity.memory},
       {"slots", n.slots}, {"master", n.master},      {"device_blocks", n.device_blocks}};
}

std::vector<batch::QueueSpec> default_queues() {
  return {{"interactive", 10, 240, 0}, {"batch", 0, 1440, 0}};
}

namespace {

hub::AuthMode parse_auth_mode(const std::string& s) {
  if (s == "static") return hub::AuthMode::Static;
  if (s == "oauth" || s == "oauth_stub") return hub::AuthMode::OAuthStub;
  throw Error(Errc::ConfigError, "unknown auth.mode '" + s + "'");
}

hub::ChargeMode parse_charge_mode(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  if (s == "COMMUNITY") return hub::ChargeMode::Community;
  if (s == "DELEGATED") return hub::ChargeMode::Delegated;
  throw Error(Errc::ConfigError, "unknown charge.mode '" + s + "'");
}

UserConfig parse_user(const json& u) {
  UserConfig c;
  c.username = u.at("username").get<std::string>();
  c.password = u.value("password", std::string());
  if (u.contains("charge_identity") && !u["charge_identity"].is_null()) {
    c.charge_identity = u["charge_identity"].get<std::string>();
  }
  c.admin = u.value("admin", false);
  return c;
}

}  // namespace

Config parse_config(const json& j) {
  if (!j.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
  Config c;
  try {
    if (auto s = j.find("spawner"); s != j.end()) {
      if (s->is_string()) {
        c.spawner = hub::parse_spawner_kind(s->get<std::string>());
      } else {
        if (s->contains("kind")) c.spawner = hub::parse_spawner_kind(s->at("kind").get<std::string>());
        if (s->contains("timing")) c.timing = s->at("timing").get<spawners::Timing>();
      }
    }
    if (auto a = j.find("auth"); a != j.end()) {
      if (a->contains("mode")) c.auth_mode = parse_auth_mode(a->at("mode").get<std::string>());
      for (const auto& u : a->value("static_users", json::array())) c.users.push_back(parse_user(u));
      // oauth_codes: {"code": "username"} or {"code": {user object}}
      const auto codes = a->value("oauth_codes", json::object());
      for (const auto& [code, who] : codes.items()) {
        UserConfig u = who.is_string() ? UserConfig{who.get<std::string>(), {}, {}, false, {}} : parse_user(who);
        u.oauth_code = code;
        c.users.push_back(u);
      }
      if (auto g = a->find("generate"); g != a->end()) {
        const auto prefix = g->value("prefix", std::string("user"));
        const auto count = g->value("count", 0);
        const auto password = g->value("password", std::string("pw"));
        for (int i = 1; i <= count; ++i) {
          c.users.push_back({prefix + std::to_string(i), password, prefix + std::to_string(i), false, {}});
        }
      }
    }
    if (auto ch = j.find("charge"); ch != j.end()) {
      if (ch->contains("mode")) c.hub.charge.mode = parse_charge_mode(ch->at("mode").get<std::string>());
      c.hub.charge.community_account = ch->value("community_account", c.hub.charge.community_account);
    }
    c.hub.readiness_timeout = j.value("readiness_timeout_s", c.hub.readiness_timeout);
    c.hub.token_ttl = j.value("token_ttl_s", c.hub.token_ttl);
    if (auto b = j.find("batch"); b != j.end()) {
      if (b->contains("queues")) c.queues = b->at("queues").get<std::vector<batch::QueueSpec>>();
      c.hub_host = b->value("hub_host", c.hub_host);
    }
    if (auto s = j.find("swarm"); s != j.end()) {
      c.quota.per_user_quota = s->value("per_user_quota", c.quota.per_user_quota);
      c.quota.export_total = s->value("export_total", c.quota.export_total);
      c.export_root = s->value("export_root", c.export_root);
      c.persist_volumes = s->value("persist", c.persist_volumes);
    }
    if (auto s = j.find("storage"); s != j.end()) {
      c.replication = s->value("replication", c.replication);
      c.storage_root = s->value("root", c.storage_root);
      c.device_blocks = s->value("device_blocks", c.device_blocks);
    }
    if (j.contains("nodes")) c.nodes = j.at("nodes").get<std::vector<NodeConfig>>();
    c.system_pods = j.value("system_pods", c.system_pods);
    c.seed = j.value("seed", c.seed);
    c.deterministic_tokens = j.value("deterministic_tokens", c.deterministic_tokens);
    if (auto h = j.find("hub_backend"); h != j.end()) c.hub_backend = h->get<Endpoint>();
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, e.what());
  }
  if (c.hub.readiness_timeout <= 0) throw Error(Errc::ConfigError, "readiness_timeout_s must be > 0");
  if (c.replication < 1) throw Error(Errc::ConfigError, "storage.replication must be >= 1");
  return c;
}

std::optional<proxy::HttpResponse> SimTransport::send(const Endpoint& backend, const proxy::HttpRequest& request) {
  if (backend == hub_) return proxy::HttpResponse{200, {{"Content-Type", "text/plain"}}, "hub"};
  auto user = lookup_(backend);
  if (!user) return std::nullopt;
  (void)request;
  return proxy::HttpResponse{200, {{"Content-Type", "text/plain"}}, "OK-" + *user};
}

// ---- Deployment ------------------------------------------------------------

Deployment::Deployment(Config config, std::unique_ptr<proxy::Transport> transport)
    : config_(std::move(config)), cluster_(config_.seed), routes_(config_.hub_backend) {
  if (config_.queues.empty()) config_.queues = default_queues();

  hub::Authenticator auth(config_.auth_mode);
  for (const auto& u : config_.users) {
    hub::UserAccount account{u.username, hub::AuthSource::Static, u.charge_identity, u.admin};
    if (u.oauth_code) {
      auth.add_oauth_code(*u.oauth_code, account);
    } else {
      auth.add_static_user(account, u.password);
    }
  }
  hub_ = std::make_unique<hub::Hub>(config_.hub, std::move(auth),
                                    config_.deterministic_tokens ? hub::TokenStore(config_.seed) : hub::TokenStore(),
                                    routes_, cluster_);
  auto sink = hub_->sink();

  switch (config_.spawner) {
    case hub::SpawnerKind::Batch:
      scheduler_ = std::make_unique<batch::BatchScheduler>(config_.queues, config_.hub_host);
      batch_spawner_ = std::make_unique<spawners::BatchSpawner>(
          *scheduler_, Endpoint{config_.hub_host, config_.hub_backend.port}, cluster_, sink, config_.timing);
      spawner_ = batch_spawner_.get();
      cluster_.subscribe("spawner-batch", [this](const sim::Fault& f) { return batch_spawner_->on_fault(f); });
      break;
    case hub::SpawnerKind::Swarm:
      swarm_ = std::make_unique<swarm::SwarmCluster>();
      volumes_ = std::make_unique<swarm::VolumeManager>(config_.quota, config_.export_root, config_.persist_volumes);
      swarm_spawner_ = std::make_unique<spawners::SwarmSpawner>(*swarm_, *volumes_, cluster_, sink, config_.timing);
      spawner_ = swarm_spawner_.get();
      cluster_.subscribe("spawner-swarm", [this](const sim::Fault& f) { return swarm_spawner_->on_fault(f); });
      break;
    case hub::SpawnerKind::K8s:
      pool_ = std::make_unique<storage::StoragePool>(config_.replication, config_.storage_root);
      orchestrator_ = std::make_unique<k8s::Orchestrator>(*pool_);
      k8s_spawner_ = std::make_unique<spawners::K8sSpawner>(*orchestrator_, cluster_, sink, config_.timing);
      spawner_ = k8s_spawner_.get();
      cluster_.subscribe("spawner-k8s", [this](const sim::Fault& f) { return k8s_spawner_->on_fault(f); });
      break;
  }
  hub_->set_spawner(spawner_);

  cluster_.subscribe("proxy", [this](const sim::Fault& f) {
    if (f.kind != sim::FaultKind::DropBackend) return false;
    dropped_.insert(f.target);
    return true;
  });
  cluster_.set_target_known([this](const sim::Fault& f) { return target_known(f); });
  cluster_.set_after_timer([this] { hub_->pump(); });

  if (!transport) {
    transport = std::make_unique<SimTransport>(config_.hub_backend,
                                               [this](const Endpoint& e) { return backend_owner(e); });
  }
  transport_ = std::move(transport);
  edge_ = std::make_unique<proxy::EdgeProxy>(routes_, *transport_, 2);
  edge_->on_backend_down([this](const std::string& session_id, const Endpoint& backend) {
    cluster_.log("proxy", "backend_down", {{"session", session_id}, {"backend", backend.to_string()}});
    hub_->post({session_id, hub::EventKind::BackendDown, backend, {}});
  });

  if (config_.spawner == hub::SpawnerKind::K8s && config_.system_pods) {
    for (const char* name : {"hub", "edge-proxy-0", "edge-proxy-1"}) {
      orchestrator_->upsert_pod({name, {1, 512, 1}, std::nullopt, k8s::kSystemOwner});
    }
  }
  for (const auto& n : config_.nodes) join_node(n);
  settle();
}

Deployment::~Deployment() {
  // Timers and hooks capture `this`; drop them before members go away.
  cluster_.set_after_timer({});
}

bool Deployment::target_known(const sim::Fault& f) const {
  if (f.kind == sim::FaultKind::DropBackend) {
    auto active = hub_->active_session_for(f.target);  // a username also works
    if (active) return true;
    try {
      return !hub::is_terminal(hub_->get_session(f.target).state);
    } catch (const Error&) {
      return false;
    }
  }
  if (scheduler_) return scheduler_->has_node(f.target);
  if (swarm_) return swarm_->has_node(f.target);
  return orchestrator_->observed().nodes.count(f.target) != 0;
}

std::optional<std::string> Deployment::backend_owner(const Endpoint& e) const {
  const auto table = routes_.snapshot();
  for (const auto& [prefix, route] : table->routes) {
    if (!(route.backend == e)) continue;
    if (dropped_.count(route.session_id)) return std::nullopt;
    if (!spawner_->backend_alive(route.session_id)) return std::nullopt;
    return hub_->get_session(route.session_id).username;
  }
  return std::nullopt;
}

void Deployment::settle() {
  std::lock_guard lock(mu_);
  do {
    hub_->pump();
    cluster_.settle();
  } while (hub_->pending_events() > 0 || cluster_.timer_due());
}

void Deployment::advance(LogicalTime seconds) {
  std::lock_guard lock(mu_);
  hub_->pump();
  cluster_.advance(seconds);
  settle();
}

hub::AuthToken Deployment::login(const std::string& username, const std::string& password) {
  std::lock_guard lock(mu_);
  return hub_->authenticate(hub::PasswordCredential{username, password});
}

hub::AuthToken Deployment::login_oauth(const std::string& code) {
  std::lock_guard lock(mu_);
  return hub_->authenticate(hub::OAuthCode{code});
}

hub::SessionRecord Deployment::spawn(const std::string& token, const hub::SpawnOptions& options) {
  std::lock_guard lock(mu_);
  auto record = hub_->start_session(token, options);
  settle();
  return hub_->get_session(record.session_id);
}

hub::SessionRecord Deployment::stop(const std::string& token, const std::string& session_id) {
  std::lock_guard lock(mu_);
  hub_->stop_session(token, session_id);
  settle();
  return hub_->get_session(session_id);
}

void Deployment::start_system_services() {
  if (!swarm_ || !config_.system_pods || !swarm_->master() || swarm_->has_service("hub")) return;
  swarm_->schedule_service({"hub", 1, {1, 512}, swarm::Placement::MasterOnly, std::nullopt});
}

json Deployment::join_node(NodeConfig node) {
  std::lock_guard lock(mu_);
  if (node.device_blocks <= 0) node.device_blocks = config_.device_blocks;
  if (node.id.empty()) throw Error(Errc::ConfigError, "node id required");
  if (scheduler_) {
    scheduler_->add_node(node.id, node.capacity, node.slots);
    batch_spawner_->kick();
  } else if (swarm_) {
    if (node.master) {
      swarm_->join_node(node.id, node.capacity, std::nullopt);
    } else {
      if (!swarm_->master()) throw Error(Errc::NoMaster, "join a master first");
      swarm_->join_node(node.id, node.capacity, swarm_->master());
    }
    start_system_services();
  } else {
    k8s_spawner_->join(node.id, node.capacity, node.device_blocks);
  }
  cluster_.log("deploy", "node_joined", {{"node", node.id}});
  settle();
  return node;
}

json Deployment::list_nodes() const {
  std::lock_guard lock(mu_);
  json out = json::array();
  if (scheduler_) {
    for (const auto& [id, n] : scheduler_->nodes()) {
      out.push_back({{"node_id", id}, {"capacity", n.capacity}, {"slots", n.slots}, {"used_slots", n.used_slots},
                     {"alive", n.alive}});
    }
  } else if (swarm_) {
    for (const auto& [_, n] : swarm_->nodes()) out.push_back(n);
  } else {
    for (const auto& [_, n] : orchestrator_->observed().nodes) {
      json j = n;
      if (pool_->has_device(n.node_id)) {
        for (const auto& d : pool_->devices()) {
          if (d.node_id == n.node_id) j["device"] = d;
        }
      }
      out.push_back(std::move(j));
    }
  }
  return out;
}

json Deployment::drain_node(const NodeId& node) {
  std::lock_guard lock(mu_);
  json out = json::array();
  if (scheduler_) throw Error(Errc::Unsupported, "batch nodes cannot be drained");
  if (swarm_) {
    for (const auto& a : swarm_spawner_->drain(node)) {
      json j = {{"service", a.service}, {"lost_container", a.lost_container}, {"from", a.from}};
      if (a.replacement) j["to"] = a.replacement->node_id;
      out.push_back(std::move(j));
    }
  } else {
    for (const auto& a : k8s_spawner_->drain(node)) out.push_back(a);
  }
  cluster_.log("deploy", "node_drained", {{"node", node}, {"moved", out.size()}});
  settle();
  return out;
}

sim::FaultReport Deployment::kill_node(const NodeId& node) {
  std::lock_guard lock(mu_);
  auto report = cluster_.inject_fault({sim::FaultKind::KillNode, node.str()});
  settle();
  return report;
}

sim::FaultReport Deployment::restore_node(const NodeId& node) {
  std::lock_guard lock(mu_);
  auto report = cluster_.inject_fault({sim::FaultKind::RestoreNode, node.str()});
  settle();
  return report;
}

sim::FaultReport Deployment::drop_backend(const std::string& session_id) {
  std::lock_guard lock(mu_);
  std::string id = session_id;
  if (auto active = hub_->active_session_for(session_id)) id = active->session_id;
  auto report = cluster_.inject_fault({sim::FaultKind::DropBackend, id});
  settle();
  return report;
}

std::vector<swarm::QuotaRow> Deployment::quota_report() const {
  std::lock_guard lock(mu_);
  if (volumes_) return volumes_->quota_report();
  if (!pool_) throw Error(Errc::Unsupported, "batch sessions have no managed volumes");
  std::vector<swarm::QuotaRow> rows;
  for (const auto& c : pool_->claims()) {
    const auto bytes = static_cast<std::int64_t>(pool_->read_claim_data(c.claim_id).size());
    const MiB used = (bytes + (1 << 20) - 1) >> 20;
    swarm::QuotaRow row{c.owner, used, c.size, 100.0 * static_cast<double>(used) / static_cast<double>(c.size), false};
    row.flagged = row.percent >= swarm::VolumeManager::kDefaultWarnThreshold;
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const swarm::QuotaRow& a, const swarm::QuotaRow& b) { return a.percent > b.percent; });
  return rows;
}

json Deployment::apply_manifest(const json& manifest) {
  std::lock_guard lock(mu_);
  if (!orchestrator_) throw Error(Errc::Unsupported, "manifests need the K8S spawner");
  auto desired = k8s::parse_manifest(manifest);
  for (const auto& [name, spec] : desired.pods) {
    if (name.rfind("jupyter-", 0) == 0) throw Error(Errc::ConfigError, name + " is managed by the hub");
  }
  orchestrator_->apply_manifest(desired);
  auto result = k8s_spawner_->reconcile();
  settle();
  return result;
}

void Deployment::write_user_file(const std::string& username, const std::string& name, const std::string& content) {
  std::lock_guard lock(mu_);
  spawner_->write_user_file(username, name, content);
  cluster_.log("deploy", "file_written", {{"user", username}, {"file", name}, {"bytes", content.size()}});
}

std::string Deployment::read_user_file(const std::string& username, const std::string& name) const {
  std::lock_guard lock(mu_);
  return spawner_->read_user_file(username, name);
}

proxy::HttpResponse Deployment::request(const proxy::HttpRequest& request) {
  std::lock_guard lock(mu_);
  auto response = edge_->forward(request);
  settle();
  return response;
}

std::string Deployment::pool_health() const {
  std::lock_guard lock(mu_);
  if (!pool_) return "HEALTHY";
  return std::string(storage::health_name(pool_->health()));
}

std::vector<std::string> Deployment::check_invariants() const {
  std::lock_guard lock(mu_);
  auto problems = hub_->check_invariants();
  if (pool_) {
    for (auto& p : pool_->check_invariants()) problems.push_back("storage: " + p);
  }
  if (orchestrator_) {
    for (const auto& [id, n] : orchestrator_->observed().nodes) {
      if (!n.reserved.fits_within(n.capacity)) problems.push_back("k8s: " + id.str() + " over capacity");
    }
  }
  return problems;
}

json Deployment::status() const {
  std::lock_guard lock(mu_);
  json counts = json::object();
  for (int s = 0; s <= static_cast<int>(hub::SessionState::Failed); ++s) {
    const auto state = static_cast<hub::SessionState>(s);
    counts[std::string(hub::state_name(state))] = hub_->count_in_state(state);
  }
  return {{"now", cluster_.now()},
          {"spawner", hub::spawner_kind_name(spawner_->kind())},
          {"sessions", counts},
          {"routes", routes_.size()},
          {"pool_health", pool_health()}};
}

}  // namespace hubgate::deploy
