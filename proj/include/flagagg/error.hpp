#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flagagg {

enum class Errc {
  NonSymmetric,
  NoConvergence,
  DependentColumns,
  DimensionMismatch,
  InvalidArgument,
  ZeroGradient,
  DomainError,
  DegenerateInput,
  TooFewWorkers,
  BadSpec,
  Overflow,
  StepTooSmall,
  ZeroMatrix,
  SingularMultipliers,
  ParseError,
  IoError,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::NonSymmetric: return "NonSymmetric";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::DependentColumns: return "DependentColumns";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ZeroGradient: return "ZeroGradient";
    case Errc::DomainError: return "DomainError";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::TooFewWorkers: return "TooFewWorkers";
    case Errc::BadSpec: return "BadSpec";
    case Errc::Overflow: return "Overflow";
    case Errc::StepTooSmall: return "StepTooSmall";
    case Errc::ZeroMatrix: return "ZeroMatrix";
    case Errc::SingularMultipliers: return "SingularMultipliers";
    case Errc::ParseError: return "ParseError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` tells callers what failed.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace flagagg
