#pragma once

#include <stdexcept>
#include <string>

namespace ptmm {

/// Argument outside the mathematical domain of a function (e.g. digamma(0)).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller misuse: mismatched dimensions, invalid option values, bad paths.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical operation failed (singular factorization, non-finite result).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A mixture component collapsed during fitting. The driver restarts from
/// another seed when it sees this.
class DegeneracyError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Every start (or every grid cell) of a fit failed.
class FitFailure : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Malformed model or data document.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Document parsed but its contents violate model invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ptmm
