#include "hubgate/error.hpp"

#include <array>

namespace hubgate {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::AuthFailed: return "AuthFailed";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::Forbidden: return "Forbidden";
    case Errc::AlreadyRunning: return "AlreadyRunning";
    case Errc::InvalidOptions: return "InvalidOptions";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::UnknownSession: return "UnknownSession";
    case Errc::MissingChargeIdentity: return "MissingChargeIdentity";
    case Errc::DuplicatePrefix: return "DuplicatePrefix";
    case Errc::MalformedPrefix: return "MalformedPrefix";
    case Errc::UnknownPrefix: return "UnknownPrefix";
    case Errc::NoRoute: return "NoRoute";
    case Errc::BackendUnreachable: return "BackendUnreachable";
    case Errc::WalltimeExceedsQueueMax: return "WalltimeExceedsQueueMax";
    case Errc::UnknownQueue: return "UnknownQueue";
    case Errc::JobNotRunning: return "JobNotRunning";
    case Errc::PortPoolExhausted: return "PortPoolExhausted";
    case Errc::UnknownJob: return "UnknownJob";
    case Errc::AlreadyTerminal: return "AlreadyTerminal";
    case Errc::DuplicateNode: return "DuplicateNode";
    case Errc::NoMaster: return "NoMaster";
    case Errc::MasterExists: return "MasterExists";
    case Errc::Unschedulable: return "Unschedulable";
    case Errc::UnknownNode: return "UnknownNode";
    case Errc::MasterLost: return "MasterLost";
    case Errc::ExportFull: return "ExportFull";
    case Errc::QuotaExceeded: return "QuotaExceeded";
    case Errc::UnknownVolume: return "UnknownVolume";
    case Errc::InsufficientCapacity: return "InsufficientCapacity";
    case Errc::DuplicateDevice: return "DuplicateDevice";
    case Errc::InsufficientDevices: return "InsufficientDevices";
    case Errc::BlockUnavailable: return "BlockUnavailable";
    case Errc::UnknownBlock: return "UnknownBlock";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::UnknownDevice: return "UnknownDevice";
    case Errc::PoolFull: return "PoolFull";
    case Errc::UnknownClaim: return "UnknownClaim";
    case Errc::ScenarioParseError: return "ScenarioParseError";
    case Errc::UnknownTarget: return "UnknownTarget";
    case Errc::Unsupported: return "Unsupported";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

bool errc_from_name(std::string_view name, Errc& out) noexcept {
  static constexpr std::array kAll = {
    Errc::AuthFailed,
    Errc::Unauthorized,
    Errc::Forbidden,
    Errc::AlreadyRunning,
    Errc::InvalidOptions,
    Errc::IllegalTransition,
    Errc::UnknownSession,
    Errc::MissingChargeIdentity,
    Errc::DuplicatePrefix,
    Errc::MalformedPrefix,
    Errc::UnknownPrefix,
    Errc::NoRoute,
    Errc::BackendUnreachable,
    Errc::WalltimeExceedsQueueMax,
    Errc::UnknownQueue,
    Errc::JobNotRunning,
    Errc::PortPoolExhausted,
    Errc::UnknownJob,
    Errc::AlreadyTerminal,
    Errc::DuplicateNode,
    Errc::NoMaster,
    Errc::MasterExists,
    Errc::Unschedulable,
    Errc::UnknownNode,
    Errc::MasterLost,
    Errc::ExportFull,
    Errc::QuotaExceeded,
    Errc::UnknownVolume,
    Errc::InsufficientCapacity,
    Errc::DuplicateDevice,
    Errc::InsufficientDevices,
    Errc::BlockUnavailable,
    Errc::UnknownBlock,
    Errc::ChecksumMismatch,
    Errc::UnknownDevice,
    Errc::PoolFull,
    Errc::UnknownClaim,
    Errc::ScenarioParseError,
    Errc::UnknownTarget,
    Errc::Unsupported,
    Errc::ConfigError,
  };
  for (Errc c : kAll) {
    if (errc_name(c) == name) {
      out = c;
      return true;
    }
  }
  return false;
}

}  // namespace hubgate
