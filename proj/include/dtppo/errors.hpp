#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dtppo {

enum class ErrorCode {
  kInvalidSpec,
  kDensityInfeasible,
  kFormatVersionMismatch,
  kCorruptFile,
  kTooManyAgents,
  kDimensionMismatch,
  kNonFiniteAction,
  kEpisodeFinished,
  kShapeMismatch,
  kHeadDivisibility,
  kNotScalarLoss,
  kWindowTooLong,
  kLengthMismatch,
  kEmptyBatch,
  kNonFiniteLoss,
  kConfigMismatch,
  kConflictingFlags,
  kInsufficientMaps,
  kZeroShotViolation,
  kConfigError,
  kIoError,
};

const char* to_string(ErrorCode code);

// Every failure surfaced by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

class CorruptFileError : public Error {
 public:
  CorruptFileError(std::uint64_t byte_offset, const std::string& what)
      : Error(ErrorCode::kCorruptFile,
              what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kDensityInfeasible: return "DensityInfeasible";
    case ErrorCode::kFormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kTooManyAgents: return "TooManyAgents";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFiniteAction: return "NonFiniteAction";
    case ErrorCode::kEpisodeFinished: return "EpisodeFinished";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kHeadDivisibility: return "HeadDivisibility";
    case ErrorCode::kNotScalarLoss: return "NotScalarLoss";
    case ErrorCode::kWindowTooLong: return "WindowTooLong";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kConfigMismatch: return "ConfigMismatch";
    case ErrorCode::kConflictingFlags: return "ConflictingFlags";
    case ErrorCode::kInsufficientMaps: return "InsufficientMaps";
    case ErrorCode::kZeroShotViolation: return "ZeroShotViolation";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace dtppo
