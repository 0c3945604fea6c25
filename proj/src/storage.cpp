#include "hubgate/storage.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include "hubgate/error.hpp"

namespace fs = std::filesystem;

namespace hubgate::storage {

std::uint32_t checksum(const std::string& payload) noexcept {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* bytes = reinterpret_cast<const Bytef*>(payload.data());
  std::size_t left = payload.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, bytes, chunk);
    bytes += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void to_json(nlohmann::json& j, const Device& d) {
  j = {{"node_id", d.node_id}, {"capacity", d.capacity}, {"used", d.used}, {"alive", d.alive}};
}

void from_json(const nlohmann::json& j, Device& d) {
  j.at("node_id").get_to(d.node_id);
  j.at("capacity").get_to(d.capacity);
  j.at("used").get_to(d.used);
  j.at("alive").get_to(d.alive);
}

std::string_view health_name(Health h) noexcept { return h == Health::Healthy ? "HEALTHY" : "DEGRADED"; }

void to_json(nlohmann::json& j, const BlockPlacement& b) {
  j = {{"block_id", b.block_id},
       {"replicas", b.replicas},
       {"payload_hash", b.payload_hash},
       {"size", b.size},
       {"written", b.written}};
}

void from_json(const nlohmann::json& j, BlockPlacement& b) {
  j.at("block_id").get_to(b.block_id);
  j.at("replicas").get_to(b.replicas);
  j.at("payload_hash").get_to(b.payload_hash);
  j.at("size").get_to(b.size);
  j.at("written").get_to(b.written);
}

void to_json(nlohmann::json& j, const VolumeClaim& c) {
  j = {{"claim_id", c.claim_id}, {"size", c.size}, {"block_ids", c.block_ids}, {"owner", c.owner}};
}

void from_json(const nlohmann::json& j, VolumeClaim& c) {
  j.at("claim_id").get_to(c.claim_id);
  j.at("size").get_to(c.size);
  j.at("block_ids").get_to(c.block_ids);
  j.at("owner").get_to(c.owner);
}

void to_json(nlohmann::json& j, const RebalanceReport& r) {
  j = {{"lost", r.lost},
       {"affected_blocks", r.affected_blocks},
       {"moved_blocks", r.moved_blocks},
       {"lost_blocks", r.lost_blocks},
       {"health", health_name(r.health)}};
}

StoragePool::StoragePool(int k, fs::path root) : k_(k), root_(std::move(root)) {
  if (k_ < 1) throw Error(Errc::ConfigError, "replication factor must be >= 1");
  if (!root_.empty()) fs::create_directories(root_);
}

StoragePool::StoragePool(StoragePool&& other) noexcept
    : k_(other.k_),
      root_(std::move(other.root_)),
      devices_(std::move(other.devices_)),
      placements_(std::move(other.placements_)),
      claims_(std::move(other.claims_)),
      memory_(std::move(other.memory_)),
      next_block_(other.next_block_),
      next_claim_(other.next_claim_) {}

// ---- payload storage ---------------------------------------------------------

std::string StoragePool::load_payload(const NodeId& node, const BlockPlacement& b) const {
  if (!b.written) return {};
  if (root_.empty()) {
    auto it = memory_.find({node, b.block_id});
    if (it == memory_.end()) throw Error(Errc::BlockUnavailable, "replica missing on " + node.str());
    return it->second;
  }
  std::ifstream in(root_ / node.str() / std::to_string(b.block_id), std::ios::binary);
  if (!in) throw Error(Errc::BlockUnavailable, "replica file missing on " + node.str());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void StoragePool::store_payload(const NodeId& node, BlockId id, const std::string& payload) {
  if (root_.empty()) {
    memory_[{node, id}] = payload;
    return;
  }
  const fs::path dir = root_ / node.str();
  fs::create_directories(dir);
  std::ofstream out(dir / std::to_string(id), std::ios::binary | std::ios::trunc);
  out << payload;
  if (!out) throw Error(Errc::ConfigError, "cannot write block " + std::to_string(id) + " on " + node.str());
}

void StoragePool::erase_payload(const NodeId& node, BlockId id) {
  if (root_.empty()) {
    memory_.erase({node, id});
    return;
  }
  std::error_code ec;
  fs::remove(root_ / node.str() / std::to_string(id), ec);
}

void StoragePool::wipe_device(const NodeId& node) {
  if (root_.empty()) {
    for (auto it = memory_.begin(); it != memory_.end();) {
      it = it->first.first == node ? memory_.erase(it) : std::next(it);
    }
    return;
  }
  std::error_code ec;
  fs::remove_all(root_ / node.str(), ec);
}

// ---- placement -------------------------------------------------------------

std::vector<NodeId> StoragePool::choose(std::size_t want, const std::vector<NodeId>& exclude,
                                        const std::map<NodeId, std::int64_t>* free_override) const {
  std::vector<std::pair<std::int64_t, NodeId>> candidates;
  for (const auto& [id, d] : devices_) {
    if (!d.alive) continue;
    if (std::find(exclude.begin(), exclude.end(), id) != exclude.end()) continue;
    const std::int64_t free = free_override ? free_override->at(id) : d.free();
    if (free > 0) candidates.emplace_back(free, id);
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < candidates.size() && i < want; ++i) out.push_back(candidates[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

void StoragePool::add_device(const NodeId& node, std::int64_t capacity) {
  std::unique_lock lock(mu_);
  if (devices_.count(node)) throw Error(Errc::DuplicateDevice, node.str());
  if (capacity < 1) throw Error(Errc::ConfigError, "device capacity must be >= 1 block");
  devices_.emplace(node, Device{node, capacity, 0, true});
}

BlockPlacement StoragePool::place_locked(const std::string& payload, bool written) {
  auto nodes = choose(static_cast<std::size_t>(k_), {}, nullptr);
  if (nodes.empty()) throw Error(Errc::InsufficientDevices, "no alive device has a free block");
  BlockPlacement b;
  b.block_id = next_block_++;
  b.replicas = std::move(nodes);
  b.payload_hash = checksum(payload);
  b.size = payload.size();
  b.written = written;
  for (const auto& n : b.replicas) {
    ++devices_.at(n).used;
    if (written) store_payload(n, b.block_id, payload);
  }
  placements_.emplace(b.block_id, b);
  return b;
}

BlockPlacement StoragePool::place_block(const std::string& payload) {
  if (payload.size() > kBlockSizeBytes) throw Error(Errc::ConfigError, "payload exceeds block size");
  std::unique_lock lock(mu_);
  return place_locked(payload, true);
}

std::string StoragePool::read_block(BlockId id) const {
  std::shared_lock lock(mu_);
  auto it = placements_.find(id);
  if (it == placements_.end()) throw Error(Errc::UnknownBlock, std::to_string(id));
  const auto& b = it->second;
  if (b.replicas.empty()) throw Error(Errc::BlockUnavailable, "block " + std::to_string(id) + " has no live replica");
  auto payload = load_payload(b.replicas.front(), b);
  if (checksum(payload) != b.payload_hash) {
    throw Error(Errc::ChecksumMismatch, "block " + std::to_string(id) + " on " + b.replicas.front().str());
  }
  return payload;
}

void StoragePool::write_locked(BlockPlacement& b, const std::string& payload) {
  if (payload.size() > kBlockSizeBytes) throw Error(Errc::ConfigError, "payload exceeds block size");
  if (b.replicas.empty()) throw Error(Errc::BlockUnavailable, "block " + std::to_string(b.block_id));
  for (const auto& n : b.replicas) store_payload(n, b.block_id, payload);
  b.payload_hash = checksum(payload);
  b.size = payload.size();
  b.written = true;
}

void StoragePool::write_block(BlockId id, const std::string& payload) {
  std::unique_lock lock(mu_);
  auto it = placements_.find(id);
  if (it == placements_.end()) throw Error(Errc::UnknownBlock, std::to_string(id));
  write_locked(it->second, payload);
}

std::size_t StoragePool::rebalance_locked() {
  std::size_t created = 0;
  for (auto& [id, b] : placements_) {
    while (!b.replicas.empty() && b.replicas.size() < static_cast<std::size_t>(k_)) {
      auto target = choose(1, b.replicas, nullptr);
      if (target.empty()) break;
      if (b.written) {
        // Copy from the first surviving replica whose bytes still verify.
        std::optional<std::string> source;
        for (const auto& r : b.replicas) {
          auto payload = load_payload(r, b);
          if (checksum(payload) == b.payload_hash) {
            source = std::move(payload);
            break;
          }
        }
        if (!source) break;
        store_payload(target.front(), id, *source);
      }
      b.replicas.push_back(target.front());
      std::sort(b.replicas.begin(), b.replicas.end());
      ++devices_.at(target.front()).used;
      ++created;
    }
  }
  return created;
}

std::size_t StoragePool::rebalance() {
  std::unique_lock lock(mu_);
  return rebalance_locked();
}

RebalanceReport StoragePool::handle_device_loss(const NodeId& node) {
  std::unique_lock lock(mu_);
  auto dev = devices_.find(node);
  if (dev == devices_.end()) throw Error(Errc::UnknownDevice, node.str());
  RebalanceReport report;
  report.lost = node;
  if (dev->second.alive) {
    dev->second.alive = false;
    dev->second.used = 0;
    wipe_device(node);
    for (auto& [id, b] : placements_) {
      auto it = std::find(b.replicas.begin(), b.replicas.end(), node);
      if (it == b.replicas.end()) continue;
      b.replicas.erase(it);
      ++report.affected_blocks;
    }
    report.moved_blocks = rebalance_locked();
  }
  for (const auto& [_, b] : placements_) report.lost_blocks += b.replicas.empty();
  report.health = health_locked();
  return report;
}

void StoragePool::restore_device(const NodeId& node) {
  std::unique_lock lock(mu_);
  auto dev = devices_.find(node);
  if (dev == devices_.end()) throw Error(Errc::UnknownDevice, node.str());
  if (dev->second.alive) return;
  wipe_device(node);
  dev->second.alive = true;
  dev->second.used = 0;
}

// ---- claims ----------------------------------------------------------------

VolumeClaim StoragePool::claim_volume(MiB size, const std::string& owner) {
  if (size < 1) throw Error(Errc::ConfigError, "claim size must be >= 1 MiB");
  std::unique_lock lock(mu_);
  const auto blocks = static_cast<std::size_t>((size + kBlockSizeMiB - 1) / kBlockSizeMiB);

  std::map<NodeId, std::int64_t> free;
  std::size_t alive = 0;
  for (const auto& [id, d] : devices_) {
    free[id] = d.free();
    alive += d.alive;
  }
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(k_), alive);
  if (want == 0) throw Error(Errc::PoolFull, "no alive devices");
  // Dry run of the greedy placement so failure leaves nothing behind.
  for (std::size_t i = 0; i < blocks; ++i) {
    auto pick = choose(want, {}, &free);
    if (pick.size() < want) {
      throw Error(Errc::PoolFull, "claim of " + std::to_string(size) + " MiB needs " + std::to_string(blocks) +
                                      " blocks x" + std::to_string(want) + "; pool full after " + std::to_string(i));
    }
    for (const auto& n : pick) --free[n];
  }

  VolumeClaim claim;
  claim.claim_id = "pvc-" + std::to_string(next_claim_++);
  claim.size = size;
  claim.owner = owner;
  for (std::size_t i = 0; i < blocks; ++i) claim.block_ids.push_back(place_locked("", false).block_id);
  claims_.emplace(claim.claim_id, claim);
  return claim;
}

void StoragePool::release_claim(const std::string& claim_id) {
  std::unique_lock lock(mu_);
  auto it = claims_.find(claim_id);
  if (it == claims_.end()) throw Error(Errc::UnknownClaim, claim_id);
  for (BlockId id : it->second.block_ids) {
    auto p = placements_.find(id);
    if (p == placements_.end()) continue;
    for (const auto& n : p->second.replicas) {
      --devices_.at(n).used;
      erase_payload(n, id);
    }
    placements_.erase(p);
  }
  claims_.erase(it);
}

const VolumeClaim& StoragePool::claim(const std::string& claim_id) const {
  std::shared_lock lock(mu_);
  auto it = claims_.find(claim_id);
  if (it == claims_.end()) throw Error(Errc::UnknownClaim, claim_id);
  return it->second;
}

std::optional<VolumeClaim> StoragePool::find_claim_by_owner(const std::string& owner) const {
  std::shared_lock lock(mu_);
  for (const auto& [_, c] : claims_) {
    if (c.owner == owner) return c;
  }
  return std::nullopt;
}

std::vector<VolumeClaim> StoragePool::claims() const {
  std::shared_lock lock(mu_);
  std::vector<VolumeClaim> out;
  for (const auto& [_, c] : claims_) out.push_back(c);
  return out;
}

void StoragePool::write_claim_data(const std::string& claim_id, const std::string& data) {
  std::unique_lock lock(mu_);
  auto it = claims_.find(claim_id);
  if (it == claims_.end()) throw Error(Errc::UnknownClaim, claim_id);
  const auto& ids = it->second.block_ids;
  const std::size_t chunks = (data.size() + kBlockSizeBytes - 1) / kBlockSizeBytes;
  if (chunks > ids.size()) {
    throw Error(Errc::QuotaExceeded, claim_id + " holds " + std::to_string(it->second.size) + " MiB");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& b = placements_.at(ids[i]);
    if (i < chunks) {
      write_locked(b, data.substr(i * kBlockSizeBytes, kBlockSizeBytes));
    } else if (b.written && b.size > 0) {
      write_locked(b, "");
    }
  }
}

std::string StoragePool::read_claim_data(const std::string& claim_id) const {
  std::vector<BlockId> ids;
  {
    std::shared_lock lock(mu_);
    auto it = claims_.find(claim_id);
    if (it == claims_.end()) throw Error(Errc::UnknownClaim, claim_id);
    ids = it->second.block_ids;
  }
  std::string out;
  for (BlockId id : ids) out += read_block(id);
  return out;
}

std::vector<std::uint32_t> StoragePool::claim_checksums(const std::string& claim_id) const {
  std::shared_lock lock(mu_);
  auto it = claims_.find(claim_id);
  if (it == claims_.end()) throw Error(Errc::UnknownClaim, claim_id);
  std::vector<std::uint32_t> out;
  for (BlockId id : it->second.block_ids) out.push_back(placements_.at(id).payload_hash);
  return out;
}

// ---- queries ---------------------------------------------------------------

Health StoragePool::health_locked() const {
  for (const auto& [_, b] : placements_) {
    if (b.replicas.size() < static_cast<std::size_t>(k_)) return Health::Degraded;
  }
  return Health::Healthy;
}

Health StoragePool::health() const {
  std::shared_lock lock(mu_);
  return health_locked();
}

bool StoragePool::has_device(const NodeId& node) const {
  std::shared_lock lock(mu_);
  return devices_.count(node) != 0;
}

std::vector<Device> StoragePool::devices() const {
  std::shared_lock lock(mu_);
  std::vector<Device> out;
  for (const auto& [_, d] : devices_) out.push_back(d);
  return out;
}

std::vector<BlockPlacement> StoragePool::placements() const {
  std::shared_lock lock(mu_);
  std::vector<BlockPlacement> out;
  out.reserve(placements_.size());
  for (const auto& [_, b] : placements_) out.push_back(b);
  return out;
}

const BlockPlacement& StoragePool::placement(BlockId id) const {
  std::shared_lock lock(mu_);
  auto it = placements_.find(id);
  if (it == placements_.end()) throw Error(Errc::UnknownBlock, std::to_string(id));
  return it->second;
}

std::size_t StoragePool::block_count() const {
  std::shared_lock lock(mu_);
  return placements_.size();
}

std::vector<std::string> StoragePool::check_invariants() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> problems;
  std::map<NodeId, std::int64_t> replicas_on;
  for (const auto& [id, b] : placements_) {
    for (std::size_t i = 0; i < b.replicas.size(); ++i) {
      const auto& n = b.replicas[i];
      if (i > 0 && !(b.replicas[i - 1] < n)) problems.push_back("block " + std::to_string(id) + ": replicas not distinct");
      auto d = devices_.find(n);
      if (d == devices_.end() || !d->second.alive) {
        problems.push_back("block " + std::to_string(id) + ": replica on dead/unknown " + n.str());
      }
      ++replicas_on[n];
    }
  }
  for (const auto& [id, d] : devices_) {
    if (d.used != replicas_on[id]) {
      problems.push_back(id.str() + ": used " + std::to_string(d.used) + " != " + std::to_string(replicas_on[id]) +
                         " replicas");
    }
    if (d.used > d.capacity) problems.push_back(id.str() + ": over capacity");
  }
  return problems;
}

nlohmann::json StoragePool::manifest() const {
  std::shared_lock lock(mu_);
  nlohmann::json j = {{"k", k_}, {"block_size_mib", kBlockSizeMiB}, {"next_block", next_block_},
                      {"next_claim", next_claim_}};
  auto devs = nlohmann::json::array();
  for (const auto& [_, d] : devices_) devs.push_back(d);
  auto blocks = nlohmann::json::array();
  for (const auto& [_, b] : placements_) blocks.push_back(b);
  auto claims = nlohmann::json::array();
  for (const auto& [_, c] : claims_) claims.push_back(c);
  j["devices"] = std::move(devs);
  j["placements"] = std::move(blocks);
  j["claims"] = std::move(claims);
  return j;
}

void StoragePool::save_manifest() const {
  if (root_.empty()) return;
  const auto j = manifest();
  const fs::path tmp = root_ / (std::string(kManifest) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump() << '\n';
  }
  fs::rename(tmp, root_ / kManifest);
}

StoragePool StoragePool::load(const fs::path& root) {
  std::ifstream in(root / kManifest);
  if (!in) throw Error(Errc::ConfigError, "no manifest under " + root.string());
  try {
    nlohmann::json j;
    in >> j;
    StoragePool pool(j.at("k").get<int>(), root);
    pool.next_block_ = j.at("next_block").get<BlockId>();
    pool.next_claim_ = j.at("next_claim").get<std::uint64_t>();
    for (const auto& d : j.at("devices")) {
      auto dev = d.get<Device>();
      pool.devices_.emplace(dev.node_id, dev);
    }
    for (const auto& b : j.at("placements")) {
      auto p = b.get<BlockPlacement>();
      pool.placements_.emplace(p.block_id, p);
    }
    for (const auto& c : j.at("claims")) {
      auto claim = c.get<VolumeClaim>();
      pool.claims_.emplace(claim.claim_id, claim);
    }
    return pool;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("corrupt manifest: ") + e.what());
  }
}

}  // namespace hubgate::storage
