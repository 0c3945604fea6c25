#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hubgate/types.hpp"

namespace hubgate::swarm {

struct QuotaPolicy {
  MiB per_user_quota = 10240;
  MiB export_total = 512000;
};

// Throws ConfigError unless per_user_quota > 0 and export_total >= per_user_quota.
void validate(const QuotaPolicy& policy);

// Users the export can hold: floor(export_total / per_user_quota).
std::int64_t max_capacity(const QuotaPolicy& policy);

struct UserVolume {
  std::string username;
  std::string path;  // export_root + "/" + username
  MiB quota = 0;
  MiB used = 0;

  friend bool operator==(const UserVolume&, const UserVolume&) = default;
};

void to_json(nlohmann::json& j, const UserVolume& v);
void from_json(const nlohmann::json& j, UserVolume& v);

struct QuotaRow {
  std::string username;
  MiB used = 0;
  MiB quota = 0;
  double percent = 0;
  bool flagged = false;
};

void to_json(nlohmann::json& j, const QuotaRow& r);
void from_json(const nlohmann::json& j, QuotaRow& r);

// Per-user directories on the shared export with a directory quota each.
// The ledger is logical (MiB per volume) and every write is an atomic
// check-then-commit. With `persist`, volume contents live under a real
// directory tree and the ledger is mirrored to a JSON sidecar at the root.
class VolumeManager {
 public:
  static constexpr const char* kSidecar = ".quota.json";
  static constexpr double kDefaultWarnThreshold = 90.0;

  explicit VolumeManager(QuotaPolicy policy, std::string export_root = "export", bool persist = false,
                         double warn_threshold = kDefaultWarnThreshold);

  const QuotaPolicy& policy() const noexcept { return policy_; }
  const std::string& export_root() const noexcept { return root_; }

  // Idempotent. Throws ExportFull when another volume would overcommit the export.
  UserVolume ensure_user_volume(const std::string& username);
  // Throws UnknownVolume, QuotaExceeded (used unchanged).
  UserVolume enforce_quota_write(const std::string& username, MiB amount);

  // Writes a file into the user's volume, charging ceil(size / 1 MiB) (at
  // least 1) against the quota; overwriting credits the old file's charge.
  void write_file(const std::string& username, const std::string& name, const std::string& content);
  // Throws UnknownVolume, or UnknownTarget for a missing file.
  std::string read_file(const std::string& username, const std::string& name) const;

  std::optional<UserVolume> find(const std::string& username) const;
  std::vector<QuotaRow> quota_report() const;
  std::size_t volume_count() const;

 private:
  static MiB charge_for(std::size_t bytes);
  static void check_name(const std::string& name);
  void save_locked() const;
  void load_locked();

  QuotaPolicy policy_;
  std::string root_;
  bool persist_;
  double warn_threshold_;
  mutable std::mutex mu_;
  std::map<std::string, UserVolume> volumes_;
  std::map<std::string, std::map<std::string, std::string>> memory_files_;  // used when !persist
};

}  // namespace hubgate::swarm
