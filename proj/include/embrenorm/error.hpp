#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace embrenorm {

enum class ErrorCode {
  DimensionMismatch,
  DegenerateResidual,
  ZeroBias,
  NotNormalized,
  NonFinite,
  EmptyAccumulator,
  DuplicateId,
  InvalidConfig,
  EmptyTrainSet,
  DegenerateInput,
  KTooLarge,
  NoPositives,
  UnsupportedMetric,
  LeakageDetected,
  KeyMismatch,
  RejectionBudgetExceeded,
  InvalidEncoding,
  BadMagic,
  VersionUnsupported,
  BadHeader,
  TruncatedPayload,
  TrailingData,
  IdRowMismatch,
  NormMismatch,
  SchemaError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateResidual: return "DegenerateResidual";
    case ErrorCode::ZeroBias: return "ZeroBias";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyAccumulator: return "EmptyAccumulator";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::UnsupportedMetric: return "UnsupportedMetric";
    case ErrorCode::LeakageDetected: return "LeakageDetected";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::RejectionBudgetExceeded: return "RejectionBudgetExceeded";
    case ErrorCode::InvalidEncoding: return "InvalidEncoding";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::TrailingData: return "TrailingData";
    case ErrorCode::IdRowMismatch: return "IdRowMismatch";
    case ErrorCode::NormMismatch: return "NormMismatch";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace embrenorm
