#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "hubgate/proxy.hpp"
#include "hubgate/sim.hpp"
#include "hubgate/types.hpp"

namespace hubgate::hub {

enum class AuthSource { Static, OAuthStub };

struct UserAccount {
  std::string username;
  AuthSource auth_source = AuthSource::Static;
  std::optional<std::string> charge_identity;
  bool admin = false;
};

// [a-z0-9_-]{1,32}
bool valid_username(std::string_view name) noexcept;

struct PasswordCredential {
  std::string username;
  std::string secret;
};
struct OAuthCode {
  std::string code;
};
using Credential = std::variant<PasswordCredential, OAuthCode>;

enum class AuthMode { Static, OAuthStub };

// Pluggable credential check: a static user map, or an oauth-style stub where
// callback codes are pre-registered to users.
class Authenticator {
 public:
  explicit Authenticator(AuthMode mode = AuthMode::Static) : mode_(mode) {}

  AuthMode mode() const noexcept { return mode_; }
  // Throws ConfigError on an invalid or duplicate username.
  void add_static_user(UserAccount user, std::string secret);
  void add_oauth_code(std::string code, UserAccount user);

  // Throws AuthFailed.
  const UserAccount& check(const Credential& credential) const;
  const UserAccount* find(const std::string& username) const;

 private:
  void add_user(UserAccount user);

  AuthMode mode_;
  std::map<std::string, UserAccount> users_;
  std::map<std::string, std::string> secrets_;
  std::map<std::string, std::string> oauth_codes_;  // code -> username
};

struct AuthToken {
  std::string token;  // 128 random bits, hex
  std::string username;
  LogicalTime issued_at = 0;
  LogicalTime ttl = 0;
};

void to_json(nlohmann::json& j, const AuthToken& t);

class TokenStore {
 public:
  // Deterministic stream for simulations.
  explicit TokenStore(std::uint64_t seed);
  // Seeded from std::random_device.
  TokenStore();

  AuthToken issue(const std::string& username, LogicalTime now, LogicalTime ttl);
  // Returns the bound username. Throws Unauthorized for unknown or expired tokens.
  const std::string& verify(const std::string& token, LogicalTime now) const;
  std::size_t size() const noexcept { return tokens_.size(); }

 private:
  std::mt19937_64 rng_;
  std::map<std::string, AuthToken> tokens_;
};

struct SpawnOptions {
  std::int64_t duration = 60;  // minutes
  std::string queue = "interactive";
  std::int64_t cpus = 1;
  MiB memory = 1024;
  MiB disk_quota = 1024;
  std::string image = "datascience";

  Resources resources() const { return {cpus, memory}; }
  friend bool operator==(const SpawnOptions&, const SpawnOptions&) = default;
};

void to_json(nlohmann::json& j, const SpawnOptions& o);
// Missing fields keep their defaults; wrongly typed fields throw InvalidOptions.
void from_json(const nlohmann::json& j, SpawnOptions& o);
// Throws InvalidOptions on duration <= 0, cpus < 1, memory < 64, disk_quota < 1,
// or an empty queue/image.
void validate(const SpawnOptions& options);

enum class SpawnerKind { Batch, Swarm, K8s };
std::string_view spawner_kind_name(SpawnerKind kind) noexcept;
SpawnerKind parse_spawner_kind(std::string_view name);

enum class SessionState { Pending, Scheduled, Starting, Ready, Running, Stopping, Stopped, Failed };
std::string_view state_name(SessionState state) noexcept;
bool parse_state(std::string_view name, SessionState& out) noexcept;
inline bool is_terminal(SessionState s) noexcept {
  return s == SessionState::Stopped || s == SessionState::Failed;
}

struct Transition {
  SessionState state;
  LogicalTime time;
};

struct SessionRecord {
  std::string session_id;
  std::string username;
  SpawnerKind spawner_kind = SpawnerKind::K8s;
  SessionState state = SessionState::Pending;
  std::optional<Endpoint> backend;
  LogicalTime created_at = 0;
  LogicalTime last_transition = 0;
  std::optional<std::string> failure_reason;
  SpawnOptions options;
  std::vector<Transition> history;
};

void to_json(nlohmann::json& j, const SessionRecord& s);

enum class ChargeMode { Community, Delegated };

struct ChargeAccountPolicy {
  ChargeMode mode = ChargeMode::Community;
  std::string community_account = "community";
};

// COMMUNITY -> the community account; DELEGATED -> the user's own identity.
// Throws MissingChargeIdentity, or ConfigError for COMMUNITY without account.
std::string select_charge_account(const ChargeAccountPolicy& policy, const UserAccount& user);

enum class EventKind {
  Scheduled,
  Starting,
  BackendReady,
  BackendMoved,  // rescheduled elsewhere while RUNNING; route is replaced
  Stopped,
  Failed,
  TimedOut,
  BackendDown,  // reported by the proxy on an unreachable backend
};
std::string_view event_name(EventKind kind) noexcept;

struct SpawnerEvent {
  std::string session_id;
  EventKind kind;
  Endpoint backend;    // BackendReady / BackendMoved
  std::string reason;  // Failed
};

using EventSink = std::function<void(SpawnerEvent)>;

struct SpawnRequest {
  std::string session_id;
  UserAccount user;
  SpawnOptions options;
  std::string charge_account;  // resolved by the hub for batch spawning
};

// Backend that materializes sessions. Spawners report progress only through
// the EventSink they were given; they never touch SessionRecords.
class Spawner {
 public:
  virtual ~Spawner() = default;

  virtual SpawnerKind kind() const = 0;
  // Largest per-node capacity, or nullopt when the cluster has no nodes.
  virtual std::optional<Resources> max_node_capacity() const = 0;
  virtual void start(const SpawnRequest& request) = 0;
  // Graceful teardown; must eventually post Stopped.
  virtual void stop(const std::string& session_id) = 0;
  // Drop every resource after a failure. Posts nothing.
  virtual void release(const std::string& session_id) = 0;
  virtual bool holds_resources(const std::string& session_id) const = 0;
  // True while the session's backend process is up where it was last reported.
  virtual bool backend_alive(const std::string& session_id) const = 0;

  // Per-user persistent data, where the backend has any.
  virtual void write_user_file(const std::string& username, const std::string& name,
                               const std::string& content);
  virtual std::string read_user_file(const std::string& username, const std::string& name) const;
};

struct HubConfig {
  LogicalTime readiness_timeout = 300;
  LogicalTime token_ttl = 8 * 3600;
  ChargeAccountPolicy charge;
};

// Owns the session state machine. Every mutation runs on the caller's thread
// but goes through one ordered event queue; callers serialize access.
class Hub {
 public:
  Hub(HubConfig config, Authenticator auth, TokenStore tokens, proxy::RoutingTable& routes,
      sim::VirtualCluster& cluster);

  void set_spawner(Spawner* spawner) { spawner_ = spawner; }
  Spawner* spawner() const noexcept { return spawner_; }
  const HubConfig& config() const noexcept { return config_; }
  const Authenticator& authenticator() const noexcept { return auth_; }

  EventSink sink();
  void post(SpawnerEvent event) { queue_.push_back(std::move(event)); }
  // Applies queued events in order. Illegal events from spawners are logged and dropped.
  void pump();
  std::size_t pending_events() const noexcept { return queue_.size(); }

  AuthToken authenticate(const Credential& credential);
  // Throws Unauthorized.
  const UserAccount& verify(const std::string& token) const;

  // Throws Unauthorized, InvalidOptions, AlreadyRunning, MissingChargeIdentity.
  SessionRecord start_session(const std::string& token, const SpawnOptions& options);
  // Applies one event synchronously. Throws UnknownSession, IllegalTransition.
  SessionRecord advance_session(const std::string& session_id, const SpawnerEvent& event);
  // Throws UnknownSession (including archived sessions), Forbidden.
  SessionRecord stop_session(const std::string& token, const std::string& session_id);

  // Active or archived. Throws UnknownSession.
  SessionRecord get_session(const std::string& session_id) const;
  // get_session restricted to the owner or an admin. Throws Forbidden.
  SessionRecord get_session(const std::string& token, const std::string& session_id) const;
  std::vector<SessionRecord> list_sessions(bool include_archived = true) const;
  std::optional<SessionRecord> active_session_for(const std::string& username) const;
  std::size_t count_in_state(SessionState state) const;

  std::string route_prefix_for(const std::string& username) const { return "/user/" + username + "/"; }

  // Empty when every session invariant holds; otherwise one line per violation.
  std::vector<std::string> check_invariants() const;

 private:
  struct Active {
    SessionRecord record;
    std::uint64_t epoch = 0;  // bumps on every transition; guards stale timers
  };

  SpawnerKind spawner_kind() const;
  void transition(Active& s, SessionState to, const std::string& reason = {});
  void fail(Active& s, const std::string& reason);
  SessionRecord apply(const std::string& session_id, const SpawnerEvent& event);
  void archive(const std::string& session_id);
  void arm_readiness_timer(const Active& s);

  HubConfig config_;
  Authenticator auth_;
  TokenStore tokens_;
  proxy::RoutingTable& routes_;
  sim::VirtualCluster& cluster_;
  Spawner* spawner_ = nullptr;

  std::deque<SpawnerEvent> queue_;
  bool pumping_ = false;
  std::uint64_t next_session_ = 1;
  std::map<std::string, Active> active_;
  std::map<std::string, std::string> active_by_user_;
  std::map<std::string, SessionRecord> archive_;
};

}  // namespace hubgate::hub
