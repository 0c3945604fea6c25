#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "hubgate/types.hpp"

namespace hubgate::sim {

struct LogEntry {
  LogicalTime time = 0;
  std::uint64_t seq = 0;
  std::string source;
  std::string event;
  nlohmann::json data;

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

void to_json(nlohmann::json& j, const LogEntry& e);

enum class FaultKind { KillNode, RestoreNode, DropBackend };

std::string_view fault_kind_name(FaultKind kind) noexcept;

struct Fault {
  FaultKind kind;
  std::string target;  // node id or session id
};

struct FaultReport {
  LogicalTime time = 0;
  Fault fault;
  std::vector<std::string> notified;  // every subscriber, in subscription order
  std::vector<std::string> affected;  // subscribers that held state for the target
};

// A module holding state keyed by node (or session) registers a handler. The
// handler applies the fault and returns true iff it held state for the target.
using FaultHandler = std::function<bool(const Fault&)>;

// Deterministic virtual cluster: logical clock, ordered timer queue, event log
// and fault fan-out. Single-threaded; callers serialize access.
class VirtualCluster {
 public:
  explicit VirtualCluster(std::uint64_t seed = 0);

  LogicalTime now() const noexcept { return now_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::mt19937_64& rng() noexcept { return rng_; }

  // Timers fire in (time, insertion order). A delay of 0 fires on the next
  // settle()/advance() at the current time, never synchronously.
  void schedule_after(LogicalTime delay, std::string label, std::function<void()> fn);

  // Fire every timer due at or before now() + seconds, moving the clock to each
  // timer's time, and leave the clock at now() + seconds.
  void advance(LogicalTime seconds);
  // Fire timers due at the current time (including ones they schedule).
  void settle() { advance(0); }
  std::size_t pending_timers() const noexcept { return timers_.size(); }
  bool timer_due() const noexcept { return !timers_.empty() && timers_.begin()->first.time <= now_; }

  // Hook run after every timer callback; used to drain the hub event queue.
  void set_after_timer(std::function<void()> hook) { after_timer_ = std::move(hook); }

  void log(std::string source, std::string event, nlohmann::json data = nlohmann::json::object());
  const std::vector<LogEntry>& event_log() const noexcept { return log_; }
  // One JSON object per line; byte-stable for identical runs.
  std::string event_log_jsonl() const;

  void subscribe(std::string name, FaultHandler handler);
  std::vector<std::string> subscribers() const;
  // Applies the fault at now() and notifies every subscriber.
  // Throws Error(UnknownTarget) unless the target predicate accepts the target.
  FaultReport inject_fault(const Fault& fault);
  void set_target_known(std::function<bool(const Fault&)> known) { known_ = std::move(known); }

 private:
  struct TimerKey {
    LogicalTime time;
    std::uint64_t seq;
    friend auto operator<=>(const TimerKey&, const TimerKey&) = default;
  };
  struct Timer {
    std::string label;
    std::function<void()> fn;
  };

  std::uint64_t seed_;
  std::mt19937_64 rng_;
  LogicalTime now_ = 0;
  std::uint64_t timer_seq_ = 0;
  std::uint64_t log_seq_ = 0;
  std::map<TimerKey, Timer> timers_;
  std::function<void()> after_timer_;
  std::vector<LogEntry> log_;
  std::vector<std::pair<std::string, FaultHandler>> subscribers_;
  std::function<bool(const Fault&)> known_;
};

}  // namespace hubgate::sim
