#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ectsens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or row.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// exp-tilted moment left the representable range.
class TiltOverflow : public NumericalError {
 public:
  explicit TiltOverflow(double gamma)
      : NumericalError("tilt overflow: |gamma| too large for this outcome scale (gamma=" +
                       std::to_string(gamma) + ")"),
        gamma_(gamma) {}
  double gamma() const noexcept { return gamma_; }

 private:
  double gamma_;
};

/// Non-fatal conditions attached to fitted models.
enum class Warning {
  kSeparation,         // logistic fit diverged (perfect or quasi separation)
  kNotConverged,       // iteration cap reached
  kComponentPruned,    // mixture component dropped for negligible weight
  kDegenerateCovariate // zero-variance covariate skipped in calibration
};

inline std::string_view to_string(Warning w) {
  switch (w) {
    case Warning::kSeparation: return "separation";
    case Warning::kNotConverged: return "not_converged";
    case Warning::kComponentPruned: return "component_pruned";
    case Warning::kDegenerateCovariate: return "degenerate_covariate";
  }
  return "unknown";
}

}  // namespace ectsens
