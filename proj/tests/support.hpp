#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "hubgate/error.hpp"
#include "hubgate/k8s.hpp"

namespace hubgate::testing {

// Error code thrown by fn, or nullopt when it returns normally.
inline std::optional<Errc> thrown(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// Fresh scratch directory under the build tree (or the system temp dir).
inline std::filesystem::path scratch(const std::string& name) {
  const char* bin = std::getenv("HUBGATE_BINARY_DIR");
  auto dir = std::filesystem::path(bin ? bin : std::filesystem::temp_directory_path().string()) / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path source_dir() {
  const char* src = std::getenv("HUBGATE_SOURCE_DIR");
  return src ? std::filesystem::path(src) : std::filesystem::current_path();
}

// A random but self-consistent (desired, observed) pair: node reservations
// match their bound pods and never exceed capacity; some pods sit on dead,
// cordoned or vanished nodes; some desired specs drift from what is bound.
struct K8sCase {
  k8s::DesiredState desired;
  k8s::ObservedState observed;
};

inline K8sCase random_k8s_case(std::mt19937_64& rng) {
  auto pick = [&rng](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
  K8sCase c;
  const int nodes = pick(0, 6);
  for (int n = 1; n <= nodes; ++n) {
    k8s::NodeStatus s;
    s.node_id = "n" + std::to_string(n);
    s.capacity = {pick(1, 8), 1024L * pick(1, 16)};
    s.alive = pick(0, 5) != 0;
    s.cordoned = pick(0, 5) == 0;
    c.observed.nodes[s.node_id] = s;
  }
  const int pods = pick(0, 14);
  for (int p = 0; p < pods; ++p) {
    k8s::PodSpec spec;
    spec.name = "p" + std::to_string(p);
    spec.limits = {pick(1, 3), 256L * pick(1, 12), pick(1, 4)};
    spec.owner = pick(0, 1) ? "s" + std::to_string(p) : k8s::kSystemOwner;
    const int fate = pick(0, 9);
    if (fate < 7) c.desired.pods[spec.name] = spec;
    if (fate >= 3) {
      // Bound somewhere: an existing node with room, or a vanished one.
      std::optional<NodeId> at;
      if (nodes > 0 && pick(0, 7) != 0) {
        const NodeId cand = "n" + std::to_string(pick(1, nodes));
        auto& ns = c.observed.nodes.at(cand);
        if ((ns.reserved + spec.limits.resources()).fits_within(ns.capacity)) {
          ns.reserved += spec.limits.resources();
          ns.pods.insert(spec.name);
          at = cand;
        }
      } else {
        at = NodeId("gone" + std::to_string(pick(1, 2)));
      }
      if (at) {
        auto bound = spec;
        if (fate == 9) bound.limits.cpus += 1;  // spec drift
        if (fate == 9 && c.observed.nodes.count(*at)) {
          auto& ns = c.observed.nodes.at(*at);
          if ((ns.reserved + Resources{1, 0}).fits_within(ns.capacity)) {
            ns.reserved += Resources{1, 0};
          } else {
            bound = spec;
          }
        }
        c.observed.pods[spec.name] = {bound, *at};
      }
    }
  }
  return c;
}

}  // namespace hubgate::testing
