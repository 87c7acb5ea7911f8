#pragma once

#include <stdexcept>
#include <string>

namespace airpath {

/// Caller passed inconsistent dimensions, lengths, or out-of-domain values.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A quantity is undefined for the given inputs (e.g. zero total flow).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An iterative procedure ran out of budget.  Carries its last residual.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Regressor matrix of an identification problem is rank deficient.
class IdentifiabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Riccati iteration failed to converge (pair not stabilizable in practice).
class StabilizabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Assembled QP violates its own invariants (weights or model defect).
class AssemblyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Step trajectory did not settle inside the required band.
class SettleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed-loop run left the plant envelope.
class EnvelopeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace airpath
