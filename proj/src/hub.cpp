#include "hubgate/hub.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "hubgate/error.hpp"

namespace hubgate::hub {

bool valid_username(std::string_view name) noexcept {
  if (name.empty() || name.size() > 32) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

// ---- Authenticator ---------------------------------------------------------

void Authenticator::add_user(UserAccount user) {
  if (!valid_username(user.username)) throw Error(Errc::ConfigError, "invalid username '" + user.username + "'");
  if (users_.count(user.username)) throw Error(Errc::ConfigError, "duplicate user '" + user.username + "'");
  users_.emplace(user.username, std::move(user));
}

void Authenticator::add_static_user(UserAccount user, std::string secret) {
  user.auth_source = AuthSource::Static;
  secrets_[user.username] = std::move(secret);
  add_user(std::move(user));
}

void Authenticator::add_oauth_code(std::string code, UserAccount user) {
  user.auth_source = AuthSource::OAuthStub;
  oauth_codes_[std::move(code)] = user.username;
  if (!users_.count(user.username)) add_user(std::move(user));
}

const UserAccount& Authenticator::check(const Credential& credential) const {
  if (const auto* pw = std::get_if<PasswordCredential>(&credential)) {
    auto it = secrets_.find(pw->username);
    if (mode_ != AuthMode::Static || it == secrets_.end() || it->second != pw->secret) {
      throw Error(Errc::AuthFailed, "bad credentials for '" + pw->username + "'");
    }
    return users_.at(pw->username);
  }
  const auto& code = std::get<OAuthCode>(credential).code;
  auto it = oauth_codes_.find(code);
  if (mode_ != AuthMode::OAuthStub || it == oauth_codes_.end()) {
    throw Error(Errc::AuthFailed, "unknown oauth code");
  }
  return users_.at(it->second);
}

const UserAccount* Authenticator::find(const std::string& username) const {
  auto it = users_.find(username);
  return it == users_.end() ? nullptr : &it->second;
}

// ---- Tokens ----------------------------------------------------------------

void to_json(nlohmann::json& j, const AuthToken& t) {
  j = {{"token", t.token}, {"username", t.username}, {"issued_at", t.issued_at}, {"ttl", t.ttl}};
}

TokenStore::TokenStore(std::uint64_t seed) : rng_(seed) {}

TokenStore::TokenStore() {
  std::random_device rd;
  std::seed_seq seq{rd(), rd(), rd(), rd(), rd(), rd(), rd(), rd()};
  rng_.seed(seq);
}

AuthToken TokenStore::issue(const std::string& username, LogicalTime now, LogicalTime ttl) {
  std::string hex;
  do {
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng_()),
                  static_cast<unsigned long long>(rng_()));
    hex = buf;
  } while (tokens_.count(hex));
  AuthToken t{hex, username, now, ttl};
  tokens_.emplace(hex, t);
  return t;
}

const std::string& TokenStore::verify(const std::string& token, LogicalTime now) const {
  auto it = tokens_.find(token);
  if (it == tokens_.end()) throw Error(Errc::Unauthorized, "unknown token");
  if (now - it->second.issued_at >= it->second.ttl) throw Error(Errc::Unauthorized, "token expired");
  return it->second.username;
}

// ---- Options ---------------------------------------------------------------

void to_json(nlohmann::json& j, const SpawnOptions& o) {
  j = {{"duration", o.duration}, {"queue", o.queue},           {"cpus", o.cpus},
       {"memory", o.memory},     {"disk_quota", o.disk_quota}, {"image", o.image}};
}

void from_json(const nlohmann::json& j, SpawnOptions& o) {
  if (!j.is_object()) throw Error(Errc::InvalidOptions, "options must be an object");
  try {
    if (j.contains("duration")) j.at("duration").get_to(o.duration);
    if (j.contains("queue")) j.at("queue").get_to(o.queue);
    if (j.contains("cpus")) j.at("cpus").get_to(o.cpus);
    if (j.contains("memory")) j.at("memory").get_to(o.memory);
    if (j.contains("disk_quota")) j.at("disk_quota").get_to(o.disk_quota);
    if (j.contains("image")) j.at("image").get_to(o.image);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidOptions, e.what());
  }
}

void validate(const SpawnOptions& o) {
  if (o.duration <= 0) throw Error(Errc::InvalidOptions, "duration must be > 0");
  if (o.cpus < 1) throw Error(Errc::InvalidOptions, "cpus must be >= 1");
  if (o.memory < 64) throw Error(Errc::InvalidOptions, "memory must be >= 64 MiB");
  if (o.disk_quota < 1) throw Error(Errc::InvalidOptions, "disk_quota must be >= 1 MiB");
  if (o.queue.empty()) throw Error(Errc::InvalidOptions, "queue must be set");
  if (o.image.empty()) throw Error(Errc::InvalidOptions, "image must be set");
}

// ---- Enums -----------------------------------------------------------------

std::string_view spawner_kind_name(SpawnerKind kind) noexcept {
  switch (kind) {
    case SpawnerKind::Batch: return "BATCH";
    case SpawnerKind::Swarm: return "SWARM";
    case SpawnerKind::K8s: return "K8S";
  }
  return "?";
}

SpawnerKind parse_spawner_kind(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "BATCH") return SpawnerKind::Batch;
  if (up == "SWARM") return SpawnerKind::Swarm;
  if (up == "K8S" || up == "KUBERNETES") return SpawnerKind::K8s;
  throw Error(Errc::ConfigError, "unknown spawner kind '" + std::string(name) + "'");
}

namespace {

constexpr std::array<std::string_view, 8> kStateNames = {
    "PENDING", "SCHEDULED", "STARTING", "READY", "RUNNING", "STOPPING", "STOPPED", "FAILED"};

}  // namespace

std::string_view state_name(SessionState state) noexcept {
  return kStateNames[static_cast<std::size_t>(state)];
}

bool parse_state(std::string_view name, SessionState& out) noexcept {
  for (std::size_t i = 0; i < kStateNames.size(); ++i) {
    if (kStateNames[i] == name) {
      out = static_cast<SessionState>(i);
      return true;
    }
  }
  return false;
}

std::string_view event_name(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::Scheduled: return "Scheduled";
    case EventKind::Starting: return "Starting";
    case EventKind::BackendReady: return "BackendReady";
    case EventKind::BackendMoved: return "BackendMoved";
    case EventKind::Stopped: return "Stopped";
    case EventKind::Failed: return "Failed";
    case EventKind::TimedOut: return "TimedOut";
    case EventKind::BackendDown: return "BackendDown";
  }
  return "?";
}

void to_json(nlohmann::json& j, const SessionRecord& s) {
  auto history = nlohmann::json::array();
  for (const auto& t : s.history) history.push_back({{"state", state_name(t.state)}, {"t", t.time}});
  j = {{"session_id", s.session_id},
       {"username", s.username},
       {"spawner_kind", spawner_kind_name(s.spawner_kind)},
       {"state", state_name(s.state)},
       {"backend", s.backend ? nlohmann::json(*s.backend) : nlohmann::json(nullptr)},
       {"created_at", s.created_at},
       {"last_transition", s.last_transition},
       {"failure_reason", s.failure_reason ? nlohmann::json(*s.failure_reason) : nlohmann::json(nullptr)},
       {"options", s.options},
       {"history", std::move(history)}};
}

std::string select_charge_account(const ChargeAccountPolicy& policy, const UserAccount& user) {
  if (policy.mode == ChargeMode::Community) {
    if (policy.community_account.empty()) throw Error(Errc::ConfigError, "community account not set");
    return policy.community_account;
  }
  if (!user.charge_identity || user.charge_identity->empty()) {
    throw Error(Errc::MissingChargeIdentity, user.username);
  }
  return *user.charge_identity;
}

void Spawner::write_user_file(const std::string&, const std::string&, const std::string&) {
  throw Error(Errc::Unsupported, "this spawner keeps no per-user data");
}

std::string Spawner::read_user_file(const std::string&, const std::string&) const {
  throw Error(Errc::Unsupported, "this spawner keeps no per-user data");
}

// ---- Hub -------------------------------------------------------------------

namespace {

// The declared transition table, plus the user-stop edges from the pre-RUNNING
// states into STOPPING.
bool legal(SessionState from, SessionState to) {
  using S = SessionState;
  if (is_terminal(from)) return false;
  if (to == S::Failed) return true;
  switch (from) {
    case S::Pending: return to == S::Scheduled || to == S::Stopping;
    case S::Scheduled: return to == S::Starting || to == S::Stopping;
    case S::Starting: return to == S::Ready || to == S::Stopping;
    case S::Ready: return to == S::Running || to == S::Stopping;
    case S::Running: return to == S::Stopping;
    case S::Stopping: return to == S::Stopped;
    default: return false;
  }
}

}  // namespace

Hub::Hub(HubConfig config, Authenticator auth, TokenStore tokens, proxy::RoutingTable& routes,
         sim::VirtualCluster& cluster)
    : config_(std::move(config)),
      auth_(std::move(auth)),
      tokens_(std::move(tokens)),
      routes_(routes),
      cluster_(cluster) {}

EventSink Hub::sink() {
  return [this](SpawnerEvent e) { post(std::move(e)); };
}

SpawnerKind Hub::spawner_kind() const {
  if (!spawner_) throw Error(Errc::ConfigError, "no spawner configured");
  return spawner_->kind();
}

AuthToken Hub::authenticate(const Credential& credential) {
  const auto& user = auth_.check(credential);
  auto token = tokens_.issue(user.username, cluster_.now(), config_.token_ttl);
  cluster_.log("hub", "login", {{"user", user.username}});
  return token;
}

const UserAccount& Hub::verify(const std::string& token) const {
  const auto& name = tokens_.verify(token, cluster_.now());
  const auto* user = auth_.find(name);
  if (!user) throw Error(Errc::Unauthorized, "user no longer configured");
  return *user;
}

SessionRecord Hub::start_session(const std::string& token, const SpawnOptions& options) {
  const auto& user = verify(token);
  const auto kind = spawner_kind();
  if (auto it = active_by_user_.find(user.username); it != active_by_user_.end()) {
    throw Error(Errc::AlreadyRunning, user.username + " already has session " + it->second);
  }
  validate(options);
  const auto largest = spawner_->max_node_capacity();
  if (!largest) throw Error(Errc::InvalidOptions, "cluster has no nodes");
  if (!options.resources().fits_within(*largest)) {
    throw Error(Errc::InvalidOptions, "request (" + std::to_string(options.cpus) + " cpus, " +
                                          std::to_string(options.memory) + " MiB) exceeds largest node (" +
                                          std::to_string(largest->cpus) + " cpus, " +
                                          std::to_string(largest->memory) + " MiB)");
  }
  SpawnRequest request{"", user, options, ""};
  if (kind == SpawnerKind::Batch) request.charge_account = select_charge_account(config_.charge, user);

  request.session_id = "s" + std::to_string(next_session_++);
  Active s;
  s.record.session_id = request.session_id;
  s.record.username = user.username;
  s.record.spawner_kind = kind;
  s.record.state = SessionState::Pending;
  s.record.created_at = s.record.last_transition = cluster_.now();
  s.record.options = options;
  s.record.history.push_back({SessionState::Pending, cluster_.now()});
  auto [it, _] = active_.emplace(request.session_id, std::move(s));
  active_by_user_[user.username] = request.session_id;
  cluster_.log("hub", "session_created",
               {{"session", request.session_id}, {"user", user.username}, {"kind", spawner_kind_name(kind)}});
  spawner_->start(request);
  return it->second.record;
}

void Hub::transition(Active& s, SessionState to, const std::string& reason) {
  if (!legal(s.record.state, to)) {
    throw Error(Errc::IllegalTransition, s.record.session_id + " " + std::string(state_name(s.record.state)) +
                                             " -> " + std::string(state_name(to)));
  }
  nlohmann::json data = {{"session", s.record.session_id},
                         {"user", s.record.username},
                         {"from", state_name(s.record.state)},
                         {"to", state_name(to)}};
  if (!reason.empty()) data["reason"] = reason;
  s.record.state = to;
  s.record.last_transition = cluster_.now();
  s.record.history.push_back({to, cluster_.now()});
  ++s.epoch;
  cluster_.log("hub", "transition", std::move(data));
}

void Hub::fail(Active& s, const std::string& reason) {
  const bool had_route = s.record.state == SessionState::Running;
  transition(s, SessionState::Failed, reason);
  s.record.failure_reason = reason;
  if (had_route) routes_.remove_route(route_prefix_for(s.record.username));
  if (spawner_) spawner_->release(s.record.session_id);
}

void Hub::arm_readiness_timer(const Active& s) {
  const auto id = s.record.session_id;
  const auto epoch = s.epoch;
  cluster_.schedule_after(config_.readiness_timeout, "readiness:" + id, [this, id, epoch] {
    auto it = active_.find(id);
    if (it != active_.end() && it->second.epoch == epoch && it->second.record.state == SessionState::Starting) {
      post({id, EventKind::TimedOut, {}, "TimedOut"});
    }
  });
}

void Hub::archive(const std::string& session_id) {
  auto node = active_.extract(session_id);
  active_by_user_.erase(node.mapped().record.username);
  archive_.emplace(session_id, std::move(node.mapped().record));
}

SessionRecord Hub::apply(const std::string& session_id, const SpawnerEvent& event) {
  auto it = active_.find(session_id);
  if (it == active_.end()) {
    if (archive_.count(session_id)) {
      throw Error(Errc::IllegalTransition, session_id + " is terminal; " + std::string(event_name(event.kind)));
    }
    throw Error(Errc::UnknownSession, session_id);
  }
  Active& s = it->second;
  using S = SessionState;
  const auto illegal = [&] {
    return Error(Errc::IllegalTransition, session_id + " in " + std::string(state_name(s.record.state)) +
                                              " cannot take " + std::string(event_name(event.kind)));
  };

  switch (event.kind) {
    case EventKind::Scheduled:
      transition(s, S::Scheduled);
      break;
    case EventKind::Starting:
      transition(s, S::Starting);
      arm_readiness_timer(s);
      break;
    case EventKind::BackendReady: {
      if (s.record.state != S::Starting) throw illegal();
      transition(s, S::Ready);
      s.record.backend = event.backend;
      try {
        routes_.add_route(route_prefix_for(s.record.username), event.backend, session_id);
      } catch (const Error& e) {
        fail(s, std::string(e.name()));
        break;
      }
      transition(s, S::Running);
      break;
    }
    case EventKind::BackendMoved: {
      if (s.record.state != S::Running) throw illegal();
      const auto prefix = route_prefix_for(s.record.username);
      routes_.remove_route(prefix);
      routes_.add_route(prefix, event.backend, session_id);
      s.record.backend = event.backend;
      s.record.last_transition = cluster_.now();
      cluster_.log("hub", "route_moved", {{"session", session_id}, {"backend", event.backend.to_string()}});
      break;
    }
    case EventKind::Stopped:
      if (s.record.state == S::Running) {
        routes_.remove_route(route_prefix_for(s.record.username));
        transition(s, S::Stopping, "backend exited");
      }
      if (s.record.state != S::Stopping) throw illegal();
      transition(s, S::Stopped);
      if (spawner_) spawner_->release(session_id);
      break;
    case EventKind::Failed:
      fail(s, event.reason.empty() ? "Failed" : event.reason);
      break;
    case EventKind::TimedOut:
      fail(s, "TimedOut");
      break;
    case EventKind::BackendDown:
      fail(s, "BackendDown");
      break;
  }

  SessionRecord out = s.record;
  if (is_terminal(out.state)) archive(session_id);
  return out;
}

SessionRecord Hub::advance_session(const std::string& session_id, const SpawnerEvent& event) {
  return apply(session_id, event);
}

void Hub::pump() {
  if (pumping_) return;
  pumping_ = true;
  while (!queue_.empty()) {
    SpawnerEvent e = std::move(queue_.front());
    queue_.pop_front();
    try {
      apply(e.session_id, e);
    } catch (const Error& err) {
      cluster_.log("hub", "event_dropped",
                   {{"session", e.session_id}, {"event", event_name(e.kind)}, {"error", err.name()}});
    }
  }
  pumping_ = false;
}

SessionRecord Hub::stop_session(const std::string& token, const std::string& session_id) {
  const auto& caller = verify(token);
  auto it = active_.find(session_id);
  if (it == active_.end()) throw Error(Errc::UnknownSession, session_id);
  Active& s = it->second;
  if (s.record.username != caller.username && !caller.admin) {
    throw Error(Errc::Forbidden, caller.username + " may not stop " + session_id);
  }
  if (s.record.state == SessionState::Stopping) return s.record;
  if (s.record.state == SessionState::Running) routes_.remove_route(route_prefix_for(s.record.username));
  transition(s, SessionState::Stopping, "stop requested by " + caller.username);
  SessionRecord out = s.record;
  spawner_->stop(session_id);
  return out;
}

SessionRecord Hub::get_session(const std::string& session_id) const {
  if (auto it = active_.find(session_id); it != active_.end()) return it->second.record;
  if (auto it = archive_.find(session_id); it != archive_.end()) return it->second;
  throw Error(Errc::UnknownSession, session_id);
}

SessionRecord Hub::get_session(const std::string& token, const std::string& session_id) const {
  const auto& caller = verify(token);
  auto record = get_session(session_id);
  if (record.username != caller.username && !caller.admin) {
    throw Error(Errc::Forbidden, caller.username + " may not read " + session_id);
  }
  return record;
}

std::vector<SessionRecord> Hub::list_sessions(bool include_archived) const {
  std::vector<SessionRecord> out;
  for (const auto& [_, s] : active_) out.push_back(s.record);
  if (include_archived) {
    for (const auto& [_, r] : archive_) out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const SessionRecord& a, const SessionRecord& b) {
    return natural_compare(a.session_id, b.session_id) < 0;
  });
  return out;
}

std::optional<SessionRecord> Hub::active_session_for(const std::string& username) const {
  auto it = active_by_user_.find(username);
  if (it == active_by_user_.end()) return std::nullopt;
  return active_.at(it->second).record;
}

std::size_t Hub::count_in_state(SessionState state) const {
  std::size_t n = 0;
  for (const auto& [_, s] : active_) n += s.record.state == state;
  for (const auto& [_, r] : archive_) n += r.state == state;
  return n;
}

std::vector<std::string> Hub::check_invariants() const {
  std::vector<std::string> problems;
  const auto table = routes_.snapshot();
  std::map<std::string, int> active_per_user;
  for (const auto& [id, s] : active_) {
    const auto& r = s.record;
    ++active_per_user[r.username];
    auto route = table->routes.find(route_prefix_for(r.username));
    const bool routed = route != table->routes.end() && route->second.session_id == id;
    if ((r.state == SessionState::Running) != routed) {
      problems.push_back(id + ": state " + std::string(state_name(r.state)) +
                         (routed ? " has a route" : " has no route"));
    }
  }
  for (const auto& [user, n] : active_per_user) {
    if (n > 1) problems.push_back(user + ": " + std::to_string(n) + " non-terminal sessions");
  }
  for (const auto& [prefix, route] : table->routes) {
    auto it = active_.find(route.session_id);
    if (it == active_.end() || it->second.record.state != SessionState::Running) {
      problems.push_back(prefix + ": route for non-RUNNING session " + route.session_id);
    }
  }
  for (const auto& [id, r] : archive_) {
    if (spawner_ && spawner_->holds_resources(id)) problems.push_back(id + ": terminal but holds resources");
  }
  return problems;
}

}  // namespace hubgate::hub
