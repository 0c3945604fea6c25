#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hubgate/deployment.hpp"

namespace hubgate::scenario {

// A scenario is either a bare array of steps or {"config": {...}, "steps": [...]}.
// Each step is {"op": name, ...args}. Ops: join, login, spawn, stop,
// write_data, kill_node, kill_random_node, restore_node, drop_backend, drain,
// apply, advance_clock, request, repeat, assert. A step may carry a "label";
// later steps reference its result as "${label.key}". Failed asserts are
// recorded as AssertionFailed and the run continues.
struct Scenario {
  nlohmann::json config = nlohmann::json::object();
  std::vector<nlohmann::json> steps;
};

// Throws ScenarioParseError.
Scenario parse(const nlohmann::json& j);
Scenario load_file(const std::filesystem::path& path);

// Report: {"seed", "ok", "steps": [...], "asserts": {"passed", "failed",
// "failures"}, "final": status, "event_log": [...]}. Step failures and failed
// asserts are recorded, never thrown.
nlohmann::json run(const Scenario& scenario, std::optional<std::uint64_t> seed = std::nullopt);

// Runs steps against an existing deployment (the server's /admin endpoint).
nlohmann::json run_steps(deploy::Deployment& deployment, const std::vector<nlohmann::json>& steps);

}  // namespace hubgate::scenario
