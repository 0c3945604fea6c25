#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hubgate {

// Domain error codes. The enumerator spelling is the wire name: it is what the
// HTTP API returns in {"error": ...} and what hubctl prints verbatim.
enum class Errc {
  // hub-core
  AuthFailed,
  Unauthorized,
  Forbidden,
  AlreadyRunning,
  InvalidOptions,
  IllegalTransition,
  UnknownSession,
  MissingChargeIdentity,
  // proxy
  DuplicatePrefix,
  MalformedPrefix,
  UnknownPrefix,
  NoRoute,
  BackendUnreachable,
  // spawner-batch
  WalltimeExceedsQueueMax,
  UnknownQueue,
  JobNotRunning,
  PortPoolExhausted,
  UnknownJob,
  AlreadyTerminal,
  // spawner-swarm / orchestrator
  DuplicateNode,
  NoMaster,
  MasterExists,
  Unschedulable,
  UnknownNode,
  MasterLost,
  ExportFull,
  QuotaExceeded,
  UnknownVolume,
  InsufficientCapacity,
  // storage-pool
  DuplicateDevice,
  InsufficientDevices,
  BlockUnavailable,
  UnknownBlock,
  ChecksumMismatch,
  UnknownDevice,
  PoolFull,
  UnknownClaim,
  // simulator / plumbing
  ScenarioParseError,
  UnknownTarget,
  Unsupported,
  ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

// Inverse of errc_name; returns false for names that are not error codes.
bool errc_from_name(std::string_view name, Errc& out) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  explicit Error(Errc code)
      : std::runtime_error(std::string(errc_name(code))), code_(code) {}

  Errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return errc_name(code_); }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace hubgate
