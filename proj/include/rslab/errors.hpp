#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rslab {

enum class ErrorCode {
  AllZeroWeights,
  NegativeWeight,
  NonFinite,
  CountMismatch,
  IndexOutOfRange,
  NonIntegerTotal,
  AlphaOutOfRange,
  KeyOutOfRange,
  CoordinateOutOfRange,
  DomainViolation,
  OutOfUnitInterval,
  DegenerateVariance,
  NonPosDefCovariance,
  ZeroAuxiliaryWeight,
  InvalidArgument,
  ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllZeroWeights: return "AllZeroWeights";
    case ErrorCode::NegativeWeight: return "NegativeWeight";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonIntegerTotal: return "NonIntegerTotal";
    case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
    case ErrorCode::KeyOutOfRange: return "KeyOutOfRange";
    case ErrorCode::CoordinateOutOfRange: return "CoordinateOutOfRange";
    case ErrorCode::DomainViolation: return "DomainViolation";
    case ErrorCode::OutOfUnitInterval: return "OutOfUnitInterval";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::NonPosDefCovariance: return "NonPosDefCovariance";
    case ErrorCode::ZeroAuxiliaryWeight: return "ZeroAuxiliaryWeight";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rslab
