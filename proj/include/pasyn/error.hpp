#pragma once

#include <stdexcept>
#include <string>

namespace pasyn {

enum class ErrorCode {
  kInvalidParams,
  kShapeMismatch,
  kInvalidId,
  kOutOfGrid,
  kMissingClass,
  kInvalidVolume,
  kNoGelClass,
  kInsufficientPool,
  kNonFinite,
  kCorruptCheckpoint,
  kBackwardBeforeForward,
  kMissingCell,
  kImageTooSmall,
  kEmptyReport,
  kInvalidConfig,
  kIo,
};

constexpr const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParams: return "invalid-params";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kInvalidId: return "invalid-id";
    case ErrorCode::kOutOfGrid: return "out-of-grid";
    case ErrorCode::kMissingClass: return "missing-class";
    case ErrorCode::kInvalidVolume: return "invalid-volume";
    case ErrorCode::kNoGelClass: return "no-gel-class";
    case ErrorCode::kInsufficientPool: return "insufficient-pool";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kCorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorCode::kBackwardBeforeForward: return "backward-before-forward";
    case ErrorCode::kMissingCell: return "missing-cell";
    case ErrorCode::kImageTooSmall: return "image-too-small";
    case ErrorCode::kEmptyReport: return "empty-report";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace pasyn
