#pragma once

#include <compare>
#include <cstdint>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>

#include <json.hpp>

namespace hubgate {

using LogicalTime = std::int64_t;  // logical seconds
using MiB = std::int64_t;

// Natural ("n2" < "n10") three-way comparison of identifiers: runs of digits
// compare numerically, everything else byte-wise.
std::strong_ordering natural_compare(std::string_view a, std::string_view b) noexcept;

// Identifier of a virtual node. Shared by every module that keys state by node.
// Orders naturally so "lowest node_id" tie-breaks match how operators read ids.
class NodeId {
 public:
  NodeId() = default;
  NodeId(std::string value) : value_(std::move(value)) {}  // NOLINT(google-explicit-constructor)
  NodeId(const char* value) : value_(value) {}             // NOLINT(google-explicit-constructor)

  const std::string& str() const noexcept { return value_; }
  bool empty() const noexcept { return value_.empty(); }

  friend bool operator==(const NodeId& a, const NodeId& b) noexcept { return a.value_ == b.value_; }
  friend std::strong_ordering operator<=>(const NodeId& a, const NodeId& b) noexcept {
    return natural_compare(a.value_, b.value_);
  }
  friend std::ostream& operator<<(std::ostream& os, const NodeId& id) { return os << id.value_; }

 private:
  std::string value_;
};

inline void to_json(nlohmann::json& j, const NodeId& id) { j = id.str(); }
inline void from_json(const nlohmann::json& j, NodeId& id) { id = NodeId(j.get<std::string>()); }

// Network endpoint of a session backend or the hub.
struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
  std::string to_string() const { return host + ":" + std::to_string(port); }
};

inline void to_json(nlohmann::json& j, const Endpoint& e) { j = {{"host", e.host}, {"port", e.port}}; }
inline void from_json(const nlohmann::json& j, Endpoint& e) {
  j.at("host").get_to(e.host);
  j.at("port").get_to(e.port);
}

// CPU + memory pair used for node capacity, reservations and container limits.
struct Resources {
  std::int64_t cpus = 0;
  MiB memory = 0;

  friend bool operator==(const Resources&, const Resources&) = default;
  Resources& operator+=(const Resources& o) {
    cpus += o.cpus;
    memory += o.memory;
    return *this;
  }
  Resources& operator-=(const Resources& o) {
    cpus -= o.cpus;
    memory -= o.memory;
    return *this;
  }
  friend Resources operator+(Resources a, const Resources& b) { return a += b; }
  friend Resources operator-(Resources a, const Resources& b) { return a -= b; }
  // Componentwise a <= b.
  bool fits_within(const Resources& b) const { return cpus <= b.cpus && memory <= b.memory; }
};

inline void to_json(nlohmann::json& j, const Resources& r) { j = {{"cpus", r.cpus}, {"memory", r.memory}}; }
inline void from_json(const nlohmann::json& j, Resources& r) {
  j.at("cpus").get_to(r.cpus);
  j.at("memory").get_to(r.memory);
}

// Pool of ports in [first, last] handing out the lowest free port.
class PortPool {
 public:
  PortPool(std::uint16_t first, std::uint16_t last);

  // Throws Error(PortPoolExhausted) when nothing is free.
  std::uint16_t allocate();
  // Returns false if the port was not allocated from this pool.
  bool release(std::uint16_t port);

  bool is_allocated(std::uint16_t port) const { return allocated_.count(port) != 0; }
  std::size_t allocated_count() const { return allocated_.size(); }
  std::size_t free_count() const { return size() - allocated_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(last_ - first_) + 1; }
  std::uint16_t first() const { return first_; }
  std::uint16_t last() const { return last_; }

 private:
  std::uint16_t first_;
  std::uint16_t last_;
  std::set<std::uint16_t> allocated_;
  std::set<std::uint16_t> released_;  // freed ports below the high-water mark
  std::uint32_t next_fresh_;
};

}  // namespace hubgate
