#include "hubgate/volumes.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hubgate/error.hpp"

namespace fs = std::filesystem;

namespace hubgate::swarm {

void validate(const QuotaPolicy& policy) {
  if (policy.per_user_quota <= 0) throw Error(Errc::ConfigError, "per_user_quota must be > 0");
  if (policy.export_total < policy.per_user_quota) {
    throw Error(Errc::ConfigError, "export_total must be >= per_user_quota");
  }
}

std::int64_t max_capacity(const QuotaPolicy& policy) {
  validate(policy);
  return policy.export_total / policy.per_user_quota;
}

void to_json(nlohmann::json& j, const UserVolume& v) {
  j = {{"username", v.username}, {"path", v.path}, {"quota", v.quota}, {"used", v.used}};
}

void from_json(const nlohmann::json& j, UserVolume& v) {
  j.at("username").get_to(v.username);
  j.at("path").get_to(v.path);
  j.at("quota").get_to(v.quota);
  j.at("used").get_to(v.used);
}

void to_json(nlohmann::json& j, const QuotaRow& r) {
  j = {{"username", r.username}, {"used", r.used}, {"quota", r.quota}, {"percent", r.percent}, {"flagged", r.flagged}};
}

void from_json(const nlohmann::json& j, QuotaRow& r) {
  j.at("username").get_to(r.username);
  j.at("used").get_to(r.used);
  j.at("quota").get_to(r.quota);
  j.at("percent").get_to(r.percent);
  j.at("flagged").get_to(r.flagged);
}

VolumeManager::VolumeManager(QuotaPolicy policy, std::string export_root, bool persist, double warn_threshold)
    : policy_(policy), root_(std::move(export_root)), persist_(persist), warn_threshold_(warn_threshold) {
  validate(policy_);
  if (root_.size() > 1 && root_.back() == '/') root_.pop_back();
  if (persist_) {
    fs::create_directories(root_);
    std::lock_guard lock(mu_);
    load_locked();
  }
}

MiB VolumeManager::charge_for(std::size_t bytes) {
  constexpr std::size_t kMiB = 1 << 20;
  return std::max<MiB>(1, static_cast<MiB>((bytes + kMiB - 1) / kMiB));
}

void VolumeManager::check_name(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..") {
    throw Error(Errc::ConfigError, "invalid file name '" + name + "'");
  }
}

UserVolume VolumeManager::ensure_user_volume(const std::string& username) {
  std::lock_guard lock(mu_);
  if (auto it = volumes_.find(username); it != volumes_.end()) return it->second;
  const MiB committed = static_cast<MiB>(volumes_.size()) * policy_.per_user_quota;
  if (committed + policy_.per_user_quota > policy_.export_total) {
    throw Error(Errc::ExportFull, std::to_string(volumes_.size()) + " volumes of " +
                                      std::to_string(policy_.per_user_quota) + " MiB already fill " +
                                      std::to_string(policy_.export_total) + " MiB");
  }
  UserVolume v{username, root_ + "/" + username, policy_.per_user_quota, 0};
  if (persist_) fs::create_directories(v.path);
  volumes_.emplace(username, v);
  if (persist_) save_locked();
  return v;
}

UserVolume VolumeManager::enforce_quota_write(const std::string& username, MiB amount) {
  std::lock_guard lock(mu_);
  auto it = volumes_.find(username);
  if (it == volumes_.end()) throw Error(Errc::UnknownVolume, username);
  auto& v = it->second;
  if (amount < 0 || v.used + amount > v.quota) {
    throw Error(Errc::QuotaExceeded, username + ": " + std::to_string(v.used) + " + " + std::to_string(amount) +
                                         " > " + std::to_string(v.quota));
  }
  v.used += amount;
  if (persist_) save_locked();
  return v;
}

void VolumeManager::write_file(const std::string& username, const std::string& name, const std::string& content) {
  check_name(name);
  std::lock_guard lock(mu_);
  auto it = volumes_.find(username);
  if (it == volumes_.end()) throw Error(Errc::UnknownVolume, username);
  auto& v = it->second;

  MiB credit = 0;
  const fs::path file = fs::path(v.path) / name;
  if (persist_) {
    if (fs::exists(file)) credit = charge_for(fs::file_size(file));
  } else if (auto f = memory_files_[username].find(name); f != memory_files_[username].end()) {
    credit = charge_for(f->second.size());
  }
  const MiB charge = charge_for(content.size());
  if (v.used - credit + charge > v.quota) {
    throw Error(Errc::QuotaExceeded,
                username + ": writing " + name + " needs " + std::to_string(charge) + " MiB, " +
                    std::to_string(v.quota - v.used + credit) + " MiB free");
  }
  if (persist_) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error(Errc::ConfigError, "cannot write " + file.string());
  } else {
    memory_files_[username][name] = content;
  }
  v.used = v.used - credit + charge;
  if (persist_) save_locked();
}

std::string VolumeManager::read_file(const std::string& username, const std::string& name) const {
  check_name(name);
  std::lock_guard lock(mu_);
  auto it = volumes_.find(username);
  if (it == volumes_.end()) throw Error(Errc::UnknownVolume, username);
  if (!persist_) {
    auto u = memory_files_.find(username);
    if (u == memory_files_.end() || !u->second.count(name)) throw Error(Errc::UnknownTarget, name);
    return u->second.at(name);
  }
  std::ifstream in(fs::path(it->second.path) / name, std::ios::binary);
  if (!in) throw Error(Errc::UnknownTarget, it->second.path + "/" + name);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::optional<UserVolume> VolumeManager::find(const std::string& username) const {
  std::lock_guard lock(mu_);
  auto it = volumes_.find(username);
  if (it == volumes_.end()) return std::nullopt;
  return it->second;
}

std::size_t VolumeManager::volume_count() const {
  std::lock_guard lock(mu_);
  return volumes_.size();
}

std::vector<QuotaRow> VolumeManager::quota_report() const {
  std::lock_guard lock(mu_);
  std::vector<QuotaRow> rows;
  for (const auto& [name, v] : volumes_) {
    QuotaRow row{name, v.used, v.quota, v.quota > 0 ? 100.0 * static_cast<double>(v.used) / v.quota : 0.0, false};
    row.flagged = row.percent >= warn_threshold_;
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const QuotaRow& a, const QuotaRow& b) { return a.percent > b.percent; });
  return rows;
}

void VolumeManager::save_locked() const {
  nlohmann::json j = {{"per_user_quota", policy_.per_user_quota}, {"export_total", policy_.export_total}};
  auto vols = nlohmann::json::array();
  for (const auto& [_, v] : volumes_) vols.push_back(v);
  j["volumes"] = std::move(vols);
  const fs::path tmp = fs::path(root_) / (std::string(kSidecar) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, fs::path(root_) / kSidecar);
}

void VolumeManager::load_locked() {
  const fs::path sidecar = fs::path(root_) / kSidecar;
  if (!fs::exists(sidecar)) return;
  std::ifstream in(sidecar);
  nlohmann::json j;
  try {
    in >> j;
    for (const auto& v : j.at("volumes")) {
      auto vol = v.get<UserVolume>();
      volumes_.emplace(vol.username, vol);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, "corrupt quota sidecar " + sidecar.string() + ": " + e.what());
  }
}

}  // namespace hubgate::swarm
