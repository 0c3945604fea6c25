#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "hubgate/types.hpp"

namespace hubgate::storage {

inline constexpr MiB kBlockSizeMiB = 4;
inline constexpr std::size_t kBlockSizeBytes = std::size_t{kBlockSizeMiB} << 20;

using BlockId = std::uint64_t;

// CRC-32 of the payload bytes.
std::uint32_t checksum(const std::string& payload) noexcept;

struct Device {
  NodeId node_id;
  std::int64_t capacity = 0;  // blocks
  std::int64_t used = 0;      // blocks
  bool alive = true;

  std::int64_t free() const noexcept { return alive ? capacity - used : 0; }
};

void to_json(nlohmann::json& j, const Device& d);
void from_json(const nlohmann::json& j, Device& d);

enum class Health { Healthy, Degraded };
std::string_view health_name(Health h) noexcept;

struct BlockPlacement {
  BlockId block_id = 0;
  std::vector<NodeId> replicas;  // live replicas, ascending, distinct
  std::uint32_t payload_hash = 0;
  std::size_t size = 0;
  bool written = false;  // claim blocks start unwritten (empty payload, no files)
};

void to_json(nlohmann::json& j, const BlockPlacement& b);
void from_json(const nlohmann::json& j, BlockPlacement& b);

struct VolumeClaim {
  std::string claim_id;
  MiB size = 0;
  std::vector<BlockId> block_ids;
  std::string owner;
};

void to_json(nlohmann::json& j, const VolumeClaim& c);
void from_json(const nlohmann::json& j, VolumeClaim& c);

struct RebalanceReport {
  NodeId lost;
  std::size_t affected_blocks = 0;  // blocks that had a replica on the lost device
  std::size_t moved_blocks = 0;     // new replicas created
  std::size_t lost_blocks = 0;      // blocks left with no live replica
  Health health = Health::Healthy;
};

void to_json(nlohmann::json& j, const RebalanceReport& r);

// Replicated block store over one device per node. Replicas go to the k alive
// devices with the most free blocks (lowest node id on ties). Payloads live in
// memory, or with a root directory under <root>/<node_id>/<block_id> next to a
// JSON manifest so a pool can be reopened with load().
class StoragePool {
 public:
  static constexpr const char* kManifest = "manifest.json";

  explicit StoragePool(int k = 2, std::filesystem::path root = {});
  // Reopens a pool saved with save_manifest(). Throws ConfigError.
  static StoragePool load(const std::filesystem::path& root);

  StoragePool(StoragePool&& other) noexcept;
  StoragePool& operator=(StoragePool&&) = delete;

  int replication() const noexcept { return k_; }
  bool persistent() const noexcept { return !root_.empty(); }

  // Throws DuplicateDevice.
  void add_device(const NodeId& node, std::int64_t capacity);
  // Throws InsufficientDevices when no alive device has a free block.
  BlockPlacement place_block(const std::string& payload);
  // Served from the lowest-id live replica. Throws UnknownBlock,
  // BlockUnavailable, ChecksumMismatch.
  std::string read_block(BlockId id) const;
  // Rewrites every live replica. Throws UnknownBlock, BlockUnavailable, and
  // ConfigError for payloads larger than a block.
  void write_block(BlockId id, const std::string& payload);
  // Throws UnknownDevice.
  RebalanceReport handle_device_loss(const NodeId& node);
  // Tops under-replicated blocks back up to k; returns replicas created.
  std::size_t rebalance();
  // A dead device comes back alive and empty.
  void restore_device(const NodeId& node);

  // All-or-nothing. Throws PoolFull.
  VolumeClaim claim_volume(MiB size, const std::string& owner);
  // Frees the claim's blocks on every replica. Throws UnknownClaim.
  void release_claim(const std::string& claim_id);
  const VolumeClaim& claim(const std::string& claim_id) const;
  std::optional<VolumeClaim> find_claim_by_owner(const std::string& owner) const;
  std::vector<VolumeClaim> claims() const;
  // Byte view over a claim's blocks, in block order. Throws QuotaExceeded when
  // data does not fit the claim.
  void write_claim_data(const std::string& claim_id, const std::string& data);
  std::string read_claim_data(const std::string& claim_id) const;
  // Stored checksum per block of the claim.
  std::vector<std::uint32_t> claim_checksums(const std::string& claim_id) const;

  Health health() const;
  bool has_device(const NodeId& node) const;
  std::vector<Device> devices() const;
  std::vector<BlockPlacement> placements() const;
  const BlockPlacement& placement(BlockId id) const;
  std::size_t block_count() const;

  // Accounting and distinctness problems; empty when consistent.
  std::vector<std::string> check_invariants() const;

  // No-op for in-memory pools.
  void save_manifest() const;
  nlohmann::json manifest() const;

 private:
  std::vector<NodeId> choose(std::size_t want, const std::vector<NodeId>& exclude,
                             const std::map<NodeId, std::int64_t>* free_override) const;
  std::size_t rebalance_locked();
  std::string load_payload(const NodeId& node, const BlockPlacement& b) const;
  void store_payload(const NodeId& node, BlockId id, const std::string& payload);
  void erase_payload(const NodeId& node, BlockId id);
  void wipe_device(const NodeId& node);
  BlockPlacement place_locked(const std::string& payload, bool written);
  void write_locked(BlockPlacement& b, const std::string& payload);
  Health health_locked() const;

  int k_;
  std::filesystem::path root_;
  mutable std::shared_mutex mu_;
  std::map<NodeId, Device> devices_;
  std::map<BlockId, BlockPlacement> placements_;
  std::map<std::string, VolumeClaim> claims_;
  std::map<std::pair<NodeId, BlockId>, std::string> memory_;  // payloads when not persistent
  BlockId next_block_ = 1;
  std::uint64_t next_claim_ = 1;
};

}  // namespace hubgate::storage
