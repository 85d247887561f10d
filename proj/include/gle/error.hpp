#pragma once

#include <stdexcept>
#include <string>

namespace gle {

enum class ErrorKind {
  NotStable,
  DimensionMismatch,
  SingularSolve,
  Overflow,
  EigenFailure,
  InvalidArgument,
  OrderingViolation,
  InfeasibleLMI,
  EpsilonRange,
  NonFinite,
  HypothesisViolation,
  LaplaceInstability,
  SingularNu,
  NonPositiveSigma,
  Blowup,
  StepTooLarge,
  ChannelMismatch,
  DegenerateWindow,
  ParseError,
};

inline const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotStable: return "NotStable";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::SingularSolve: return "SingularSolve";
    case ErrorKind::Overflow: return "Overflow";
    case ErrorKind::EigenFailure: return "EigenFailure";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::OrderingViolation: return "OrderingViolation";
    case ErrorKind::InfeasibleLMI: return "InfeasibleLMI";
    case ErrorKind::EpsilonRange: return "EpsilonRange";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::HypothesisViolation: return "HypothesisViolation";
    case ErrorKind::LaplaceInstability: return "LaplaceInstability";
    case ErrorKind::SingularNu: return "SingularNu";
    case ErrorKind::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorKind::Blowup: return "Blowup";
    case ErrorKind::StepTooLarge: return "StepTooLarge";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::DegenerateWindow: return "DegenerateWindow";
    case ErrorKind::ParseError: return "ParseError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(kind_name(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind k, const std::string& msg) { throw Error(k, msg); }

}  // namespace gle
