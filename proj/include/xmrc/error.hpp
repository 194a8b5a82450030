#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xmrc {

enum class Errc {
  ShapeMismatch,
  InvalidShape,
  InvalidSample,
  InvalidMask,
  LevelsTooDeep,
  SubbandCountMismatch,
  NegativeThreshold,
  UnreachableRate,
  RateBelowCenterBlock,
  InvalidParams,
  UnnormalizedMaps,
  ZeroGroundTruth,
  TooSmall,
  InsufficientACS,
  // container parsing
  BadMagic,
  UnsupportedVersion,
  UnsupportedKind,
  InvalidHeader,
  TruncatedPayload,
  TrailingBytes,
  InvalidMaskByte,
  NonFiniteSample,
  // service
  Unauthorized,
  MalformedContainer,
  TooLarge,
  UnknownDataId,
  UnknownJob,
  KindMismatch,
  MissingACS,
  NotReady,
  JobFailed,
  Io,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::InvalidShape: return "InvalidShape";
    case Errc::InvalidSample: return "InvalidSample";
    case Errc::InvalidMask: return "InvalidMask";
    case Errc::LevelsTooDeep: return "LevelsTooDeep";
    case Errc::SubbandCountMismatch: return "SubbandCountMismatch";
    case Errc::NegativeThreshold: return "NegativeThreshold";
    case Errc::UnreachableRate: return "UnreachableRate";
    case Errc::RateBelowCenterBlock: return "RateBelowCenterBlock";
    case Errc::InvalidParams: return "InvalidParams";
    case Errc::UnnormalizedMaps: return "UnnormalizedMaps";
    case Errc::ZeroGroundTruth: return "ZeroGroundTruth";
    case Errc::TooSmall: return "TooSmall";
    case Errc::InsufficientACS: return "InsufficientACS";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::UnsupportedKind: return "UnsupportedKind";
    case Errc::InvalidHeader: return "InvalidHeader";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::TrailingBytes: return "TrailingBytes";
    case Errc::InvalidMaskByte: return "InvalidMaskByte";
    case Errc::NonFiniteSample: return "NonFiniteSample";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::MalformedContainer: return "MalformedContainer";
    case Errc::TooLarge: return "TooLarge";
    case Errc::UnknownDataId: return "UnknownDataId";
    case Errc::UnknownJob: return "UnknownJob";
    case Errc::KindMismatch: return "KindMismatch";
    case Errc::MissingACS: return "MissingACS";
    case Errc::NotReady: return "NotReady";
    case Errc::JobFailed: return "JobFailed";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// CLI and the HTTP layer report `name()` verbatim.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return errc_name(code_); }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace xmrc
