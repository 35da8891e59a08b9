#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fpcost {

enum class ErrorCode {
  UnsupportedHost,
  InvalidArgument,
  InapplicableOutcome,
  ImpossibleOutcome,
  MixedLanes,
  UnclassifiableLane,
  InvalidConfig,
  AffinityUnsupported,
  UnstableClock,
  InvalidSpec,
  MissingFeature,
  OperandMismatch,
  EnvMismatch,
  UnmodeledOp,
  UnknownMachine,
  EmptyResults,
  ParseError,
  VerificationFailed,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnsupportedHost: return "UnsupportedHost";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InapplicableOutcome: return "InapplicableOutcome";
    case ErrorCode::ImpossibleOutcome: return "ImpossibleOutcome";
    case ErrorCode::MixedLanes: return "MixedLanes";
    case ErrorCode::UnclassifiableLane: return "UnclassifiableLane";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::AffinityUnsupported: return "AffinityUnsupported";
    case ErrorCode::UnstableClock: return "UnstableClock";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::MissingFeature: return "MissingFeature";
    case ErrorCode::OperandMismatch: return "OperandMismatch";
    case ErrorCode::EnvMismatch: return "EnvMismatch";
    case ErrorCode::UnmodeledOp: return "UnmodeledOp";
    case ErrorCode::UnknownMachine: return "UnknownMachine";
    case ErrorCode::EmptyResults: return "EmptyResults";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::VerificationFailed: return "VerificationFailed";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fpcost
