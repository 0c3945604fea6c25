#include "hubgate/sim.hpp"

#include <sstream>

#include "hubgate/error.hpp"

namespace hubgate::sim {

void to_json(nlohmann::json& j, const LogEntry& e) {
  j = nlohmann::json{{"t", e.time}, {"seq", e.seq}, {"src", e.source}, {"event", e.event}};
  if (!e.data.empty()) j["data"] = e.data;
}

std::string_view fault_kind_name(FaultKind kind) noexcept {
  switch (kind) {
    case FaultKind::KillNode: return "kill_node";
    case FaultKind::RestoreNode: return "restore_node";
    case FaultKind::DropBackend: return "drop_backend";
  }
  return "unknown";
}

VirtualCluster::VirtualCluster(std::uint64_t seed) : seed_(seed), rng_(seed) {}

void VirtualCluster::schedule_after(LogicalTime delay, std::string label, std::function<void()> fn) {
  if (delay < 0) delay = 0;
  timers_.emplace(TimerKey{now_ + delay, timer_seq_++}, Timer{std::move(label), std::move(fn)});
}

void VirtualCluster::advance(LogicalTime seconds) {
  const LogicalTime target = now_ + (seconds < 0 ? 0 : seconds);
  while (!timers_.empty() && timers_.begin()->first.time <= target) {
    auto node = timers_.extract(timers_.begin());
    now_ = node.key().time;
    node.mapped().fn();
    if (after_timer_) after_timer_();
  }
  now_ = target;
}

void VirtualCluster::log(std::string source, std::string event, nlohmann::json data) {
  log_.push_back(LogEntry{now_, log_seq_++, std::move(source), std::move(event), std::move(data)});
}

std::string VirtualCluster::event_log_jsonl() const {
  std::ostringstream out;
  for (const auto& e : log_) out << nlohmann::json(e).dump() << '\n';
  return out.str();
}

void VirtualCluster::subscribe(std::string name, FaultHandler handler) {
  subscribers_.emplace_back(std::move(name), std::move(handler));
}

std::vector<std::string> VirtualCluster::subscribers() const {
  std::vector<std::string> names;
  names.reserve(subscribers_.size());
  for (const auto& [name, _] : subscribers_) names.push_back(name);
  return names;
}

FaultReport VirtualCluster::inject_fault(const Fault& fault) {
  const bool known = known_ && known_(fault);
  FaultReport report{now_, fault, {}, {}};
  if (!known) {
    throw Error(Errc::UnknownTarget, std::string(fault_kind_name(fault.kind)) + " " + fault.target);
  }
  for (auto& [name, handler] : subscribers_) {
    report.notified.push_back(name);
    if (handler(fault)) report.affected.push_back(name);
  }
  log("sim", std::string(fault_kind_name(fault.kind)),
      {{"target", fault.target}, {"affected", report.affected}});
  return report;
}

}  // namespace hubgate::sim
