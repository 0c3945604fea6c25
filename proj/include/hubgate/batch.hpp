#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hubgate/hub.hpp"
#include "hubgate/types.hpp"

namespace hubgate::batch {

inline constexpr std::uint16_t kTunnelPortFirst = 41000;
inline constexpr std::uint16_t kTunnelPortLast = 41999;

struct QueueSpec {
  std::string name;
  int priority = 0;                  // higher schedules first
  std::int64_t max_walltime = 240;   // minutes
  LogicalTime min_wait = 0;          // fixed per-queue service delay before a job is eligible
};

void to_json(nlohmann::json& j, const QueueSpec& q);
void from_json(const nlohmann::json& j, QueueSpec& q);

// Rendered scheduler submission. Text form is one "#DIRECTIVE key=value" line
// per directive followed by the exec line.
struct JobScript {
  std::vector<std::pair<std::string, std::string>> directives;
  std::string exec_line;

  // Empty string when absent.
  std::string directive(const std::string& key) const;
  std::string text() const;
  // Inverse of text(). Throws ScenarioParseError on malformed input.
  static JobScript parse(const std::string& text);

  friend bool operator==(const JobScript&, const JobScript&) = default;
};

// Directives in fixed order: account, queue, walltime, cpus, memory; then the
// exec line with the image and the hub callback endpoint. If the named queue is
// in `queues`, the duration is checked against its max walltime
// (WalltimeExceedsQueueMax). Unknown queues are left for submit() to reject.
JobScript render_job_script(const hub::SpawnOptions& options, const std::string& account,
                            const Endpoint& callback, std::span<const QueueSpec> queues);

enum class JobState { Queued, Running, Canceled, Completed, NodeLost };
std::string_view job_state_name(JobState s) noexcept;
inline bool is_terminal(JobState s) noexcept { return s != JobState::Queued && s != JobState::Running; }

struct BatchJob {
  std::uint64_t job_id = 0;
  JobScript script;
  std::string queue;
  int priority = 0;
  std::int64_t walltime = 0;  // minutes
  JobState state = JobState::Queued;
  LogicalTime submit_time = 0;
  std::optional<LogicalTime> start_time;
  std::optional<NodeId> assigned_node;
};

void to_json(nlohmann::json& j, const BatchJob& job);

// Order used by the scheduler: queue priority desc, submit_time asc, job_id asc.
bool schedules_before(const BatchJob& a, const BatchJob& b) noexcept;

struct ReverseTunnel {
  std::uint64_t job_id = 0;
  NodeId origin_node;
  Endpoint target;                  // the hub
  std::uint16_t forwarded_port = 0; // listener on the hub host carrying the notebook
  std::string channel = "encrypted";
};

void to_json(nlohmann::json& j, const ReverseTunnel& t);

// A simulated listening socket. Tunnels only ever add listeners on the hub host.
struct Listener {
  std::string host;
  std::uint16_t port = 0;
  std::string owner;
};

struct ComputeNode {
  NodeId id;
  Resources capacity;
  int slots = 1;
  int used_slots = 0;
  bool alive = true;
};

// Simulated batch system: queues with priority classes, single-node jobs on
// whole-node slots, and the hub-side reverse-tunnel port pool.
class BatchScheduler {
 public:
  BatchScheduler(std::vector<QueueSpec> queues, std::string hub_host);

  const std::vector<QueueSpec>& queues() const noexcept { return queues_; }
  const QueueSpec* find_queue(const std::string& name) const;

  // Throws DuplicateNode.
  void add_node(const NodeId& id, Resources capacity, int slots = 1);
  // Marks the node dead and returns the RUNNING jobs it held, now NODE_LOST.
  // Throws UnknownNode.
  std::vector<std::uint64_t> lose_node(const NodeId& id);
  // Node returns alive with all slots free.
  void restore_node(const NodeId& id);
  bool has_node(const NodeId& id) const { return nodes_.count(id) != 0; }
  const std::map<NodeId, ComputeNode>& nodes() const noexcept { return nodes_; }
  std::optional<Resources> max_node_capacity() const;
  int free_slots() const;

  // Throws UnknownQueue.
  std::uint64_t submit(const JobScript& script, LogicalTime now);
  // Assigns eligible QUEUED jobs in schedules_before order while slots are free.
  std::vector<std::pair<std::uint64_t, NodeId>> scheduler_step(LogicalTime now);
  // Throws UnknownJob, JobNotRunning, PortPoolExhausted.
  ReverseTunnel establish_tunnel(std::uint64_t job_id, const Endpoint& hub);
  // Throws UnknownJob, AlreadyTerminal.
  BatchJob cancel(std::uint64_t job_id);
  // RUNNING jobs whose start-relative walltime has elapsed become COMPLETED.
  std::vector<std::uint64_t> expire(LogicalTime now);

  // Throws UnknownJob.
  const BatchJob& job(std::uint64_t job_id) const;
  const std::map<std::uint64_t, BatchJob>& jobs() const noexcept { return jobs_; }
  const ReverseTunnel* tunnel_for(std::uint64_t job_id) const;
  std::vector<Listener> listeners() const;
  const PortPool& ports() const noexcept { return ports_; }
  const std::string& hub_host() const noexcept { return hub_host_; }

 private:
  BatchJob& mutable_job(std::uint64_t job_id);
  void free_resources(BatchJob& job);

  std::vector<QueueSpec> queues_;
  std::string hub_host_;
  std::map<NodeId, ComputeNode> nodes_;
  std::map<std::uint64_t, BatchJob> jobs_;
  std::map<std::uint64_t, ReverseTunnel> tunnels_;
  PortPool ports_{kTunnelPortFirst, kTunnelPortLast};
  std::uint64_t next_job_ = 1;
};

}  // namespace hubgate::batch
