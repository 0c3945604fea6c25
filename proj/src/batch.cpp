#include "hubgate/batch.hpp"

#include <algorithm>
#include <sstream>

#include "hubgate/error.hpp"

namespace hubgate::batch {

void to_json(nlohmann::json& j, const QueueSpec& q) {
  j = {{"name", q.name}, {"priority", q.priority}, {"max_walltime", q.max_walltime}, {"min_wait", q.min_wait}};
}

void from_json(const nlohmann::json& j, QueueSpec& q) {
  j.at("name").get_to(q.name);
  q.priority = j.value("priority", 0);
  q.max_walltime = j.value("max_walltime", std::int64_t{240});
  q.min_wait = j.value("min_wait", LogicalTime{0});
}

std::string JobScript::directive(const std::string& key) const {
  for (const auto& [k, v] : directives) {
    if (k == key) return v;
  }
  return {};
}

std::string JobScript::text() const {
  std::string out;
  for (const auto& [k, v] : directives) out += "#DIRECTIVE " + k + "=" + v + "\n";
  out += exec_line + "\n";
  return out;
}

JobScript JobScript::parse(const std::string& text) {
  JobScript script;
  std::istringstream in(text);
  std::string line;
  bool have_exec = false;
  constexpr std::string_view kTag = "#DIRECTIVE ";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (have_exec) throw Error(Errc::ScenarioParseError, "content after exec line: " + line);
    if (line.rfind(kTag, 0) == 0) {
      auto body = line.substr(kTag.size());
      auto eq = body.find('=');
      if (eq == std::string::npos || eq == 0) throw Error(Errc::ScenarioParseError, "bad directive: " + line);
      script.directives.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      script.exec_line = line;
      have_exec = true;
    }
  }
  if (!have_exec) throw Error(Errc::ScenarioParseError, "job script has no exec line");
  return script;
}

JobScript render_job_script(const hub::SpawnOptions& options, const std::string& account,
                            const Endpoint& callback, std::span<const QueueSpec> queues) {
  if (account.empty()) throw Error(Errc::ConfigError, "charge account is empty");
  hub::validate(options);
  for (const auto& q : queues) {
    if (q.name == options.queue && options.duration > q.max_walltime) {
      throw Error(Errc::WalltimeExceedsQueueMax,
                  std::to_string(options.duration) + " > " + std::to_string(q.max_walltime) + " on " + q.name);
    }
  }
  JobScript script;
  script.directives = {{"account", account},
                       {"queue", options.queue},
                       {"walltime", std::to_string(options.duration)},
                       {"cpus", std::to_string(options.cpus)},
                       {"memory", std::to_string(options.memory)}};
  script.exec_line = "hubgate-singleuser --image=" + options.image + " --hub-callback=" + callback.to_string() +
                     " --reverse-tunnel";
  return script;
}

std::string_view job_state_name(JobState s) noexcept {
  switch (s) {
    case JobState::Queued: return "QUEUED";
    case JobState::Running: return "RUNNING";
    case JobState::Canceled: return "CANCELED";
    case JobState::Completed: return "COMPLETED";
    case JobState::NodeLost: return "NODE_LOST";
  }
  return "?";
}

void to_json(nlohmann::json& j, const BatchJob& job) {
  j = {{"job_id", job.job_id},
       {"queue", job.queue},
       {"priority", job.priority},
       {"walltime", job.walltime},
       {"state", job_state_name(job.state)},
       {"submit_time", job.submit_time},
       {"start_time", job.start_time ? nlohmann::json(*job.start_time) : nlohmann::json(nullptr)},
       {"assigned_node", job.assigned_node ? nlohmann::json(*job.assigned_node) : nlohmann::json(nullptr)},
       {"script", job.script.text()}};
}

bool schedules_before(const BatchJob& a, const BatchJob& b) noexcept {
  if (a.priority != b.priority) return a.priority > b.priority;
  if (a.submit_time != b.submit_time) return a.submit_time < b.submit_time;
  return a.job_id < b.job_id;
}

void to_json(nlohmann::json& j, const ReverseTunnel& t) {
  j = {{"job_id", t.job_id},
       {"origin_node", t.origin_node},
       {"target", t.target},
       {"forwarded_port", t.forwarded_port},
       {"channel", t.channel}};
}

BatchScheduler::BatchScheduler(std::vector<QueueSpec> queues, std::string hub_host)
    : queues_(std::move(queues)), hub_host_(std::move(hub_host)) {
  for (std::size_t i = 0; i < queues_.size(); ++i) {
    for (std::size_t k = i + 1; k < queues_.size(); ++k) {
      if (queues_[i].name == queues_[k].name) throw Error(Errc::ConfigError, "duplicate queue " + queues_[i].name);
    }
  }
}

const QueueSpec* BatchScheduler::find_queue(const std::string& name) const {
  auto it = std::find_if(queues_.begin(), queues_.end(), [&](const QueueSpec& q) { return q.name == name; });
  return it == queues_.end() ? nullptr : &*it;
}

void BatchScheduler::add_node(const NodeId& id, Resources capacity, int slots) {
  if (nodes_.count(id)) throw Error(Errc::DuplicateNode, id.str());
  if (slots < 1) throw Error(Errc::ConfigError, "slots must be >= 1");
  nodes_.emplace(id, ComputeNode{id, capacity, slots, 0, true});
}

std::vector<std::uint64_t> BatchScheduler::lose_node(const NodeId& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(Errc::UnknownNode, id.str());
  std::vector<std::uint64_t> lost;
  for (auto& [job_id, job] : jobs_) {
    if (job.state == JobState::Running && job.assigned_node == id) {
      free_resources(job);
      job.state = JobState::NodeLost;
      lost.push_back(job_id);
    }
  }
  it->second.alive = false;
  it->second.used_slots = 0;
  return lost;
}

void BatchScheduler::restore_node(const NodeId& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(Errc::UnknownNode, id.str());
  it->second.alive = true;
  it->second.used_slots = 0;
}

std::optional<Resources> BatchScheduler::max_node_capacity() const {
  std::optional<Resources> best;
  for (const auto& [_, n] : nodes_) {
    if (!best) {
      best = n.capacity;
    } else {
      best->cpus = std::max(best->cpus, n.capacity.cpus);
      best->memory = std::max(best->memory, n.capacity.memory);
    }
  }
  return best;
}

int BatchScheduler::free_slots() const {
  int n = 0;
  for (const auto& [_, node] : nodes_) {
    if (node.alive) n += node.slots - node.used_slots;
  }
  return n;
}

std::uint64_t BatchScheduler::submit(const JobScript& script, LogicalTime now) {
  const auto queue_name = script.directive("queue");
  const auto* queue = find_queue(queue_name);
  if (!queue) throw Error(Errc::UnknownQueue, queue_name);
  if (script.directive("account").empty()) throw Error(Errc::ConfigError, "job script lacks an account directive");
  BatchJob job;
  job.job_id = next_job_++;
  job.script = script;
  job.queue = queue->name;
  job.priority = queue->priority;
  try {
    job.walltime = std::stoll(script.directive("walltime"));
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, "job script lacks a numeric walltime");
  }
  job.submit_time = now;
  const auto id = job.job_id;
  jobs_.emplace(id, std::move(job));
  return id;
}

std::vector<std::pair<std::uint64_t, NodeId>> BatchScheduler::scheduler_step(LogicalTime now) {
  std::vector<BatchJob*> eligible;
  for (auto& [_, job] : jobs_) {
    if (job.state != JobState::Queued) continue;
    const auto* q = find_queue(job.queue);
    if (now >= job.submit_time + (q ? q->min_wait : 0)) eligible.push_back(&job);
  }
  std::sort(eligible.begin(), eligible.end(),
            [](const BatchJob* a, const BatchJob* b) { return schedules_before(*a, *b); });

  std::vector<std::pair<std::uint64_t, NodeId>> assigned;
  for (BatchJob* job : eligible) {
    auto node = std::find_if(nodes_.begin(), nodes_.end(),
                             [](const auto& kv) { return kv.second.alive && kv.second.used_slots < kv.second.slots; });
    if (node == nodes_.end()) break;
    ++node->second.used_slots;
    job->state = JobState::Running;
    job->assigned_node = node->first;
    job->start_time = now;
    assigned.emplace_back(job->job_id, node->first);
  }
  return assigned;
}

BatchJob& BatchScheduler::mutable_job(std::uint64_t job_id) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(Errc::UnknownJob, std::to_string(job_id));
  return it->second;
}

const BatchJob& BatchScheduler::job(std::uint64_t job_id) const {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(Errc::UnknownJob, std::to_string(job_id));
  return it->second;
}

ReverseTunnel BatchScheduler::establish_tunnel(std::uint64_t job_id, const Endpoint& hub) {
  auto& job = mutable_job(job_id);
  if (job.state != JobState::Running) {
    throw Error(Errc::JobNotRunning, std::to_string(job_id) + " is " + std::string(job_state_name(job.state)));
  }
  if (auto it = tunnels_.find(job_id); it != tunnels_.end()) return it->second;
  ReverseTunnel t;
  t.job_id = job_id;
  t.origin_node = *job.assigned_node;
  t.target = hub;
  t.forwarded_port = ports_.allocate();
  tunnels_.emplace(job_id, t);
  return t;
}

void BatchScheduler::free_resources(BatchJob& job) {
  if (job.state == JobState::Running && job.assigned_node) {
    auto& node = nodes_.at(*job.assigned_node);
    if (node.alive && node.used_slots > 0) --node.used_slots;
  }
  job.assigned_node.reset();
  if (auto it = tunnels_.find(job.job_id); it != tunnels_.end()) {
    ports_.release(it->second.forwarded_port);
    tunnels_.erase(it);
  }
}

BatchJob BatchScheduler::cancel(std::uint64_t job_id) {
  auto& job = mutable_job(job_id);
  if (is_terminal(job.state)) {
    throw Error(Errc::AlreadyTerminal, std::to_string(job_id) + " is " + std::string(job_state_name(job.state)));
  }
  free_resources(job);
  job.state = JobState::Canceled;
  return job;
}

std::vector<std::uint64_t> BatchScheduler::expire(LogicalTime now) {
  std::vector<std::uint64_t> done;
  for (auto& [id, job] : jobs_) {
    if (job.state == JobState::Running && job.start_time && now >= *job.start_time + job.walltime * 60) {
      free_resources(job);
      job.state = JobState::Completed;
      done.push_back(id);
    }
  }
  return done;
}

const ReverseTunnel* BatchScheduler::tunnel_for(std::uint64_t job_id) const {
  auto it = tunnels_.find(job_id);
  return it == tunnels_.end() ? nullptr : &it->second;
}

std::vector<Listener> BatchScheduler::listeners() const {
  std::vector<Listener> out;
  for (const auto& [id, t] : tunnels_) {
    out.push_back({t.target.host, t.forwarded_port, "tunnel:job" + std::to_string(id)});
  }
  return out;
}

}  // namespace hubgate::batch
