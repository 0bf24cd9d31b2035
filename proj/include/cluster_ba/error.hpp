#pragma once

#include <stdexcept>
#include <string>

namespace cluster_ba {

enum class ErrorCode {
  NearPi,
  EmptyCluster,
  DegenerateFeature,
  InvalidProblem,
  NumericalFailure,
  Stalled,
  Unobservable,
  SingularCovariance,
  NoConstraints,
  Parse,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NearPi: return "angle near pi";
    case ErrorCode::EmptyCluster: return "empty cluster";
    case ErrorCode::DegenerateFeature: return "degenerate feature";
    case ErrorCode::InvalidProblem: return "invalid problem";
    case ErrorCode::NumericalFailure: return "numerical failure";
    case ErrorCode::Stalled: return "stalled";
    case ErrorCode::Unobservable: return "unobservable problem";
    case ErrorCode::SingularCovariance: return "singular covariance";
    case ErrorCode::NoConstraints: return "no constraints";
    case ErrorCode::Parse: return "parse error";
    case ErrorCode::Io: return "i/o error";
  }
  return "unknown";
}

/// Library exception; code() says which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cluster_ba
