#pragma once

#include <stdexcept>
#include <string>

namespace nerb {

// Base of every error raised by the solvers.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument or broken precondition (zero steps, mismatched support, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// The terminal condition violates the constraint.
class Infeasible : public Error {
 public:
  using Error::Error;
};

// Picard iterates stopped contracting.
class Divergence : public Error {
 public:
  using Error::Error;
};

// Inner fixed point did not converge, or a root bracket could not be formed.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace nerb
