#pragma once

#include <stdexcept>
#include <string>

namespace asiplab {

// Argument outside the mathematical domain of an operation.
class DomainError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Root solver or iteration failed to converge within its budget.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Orbit did not return to the base within the configured cap.
class CappedReturnError : public NumericError {
public:
  CappedReturnError(const std::string &what, long long cap)
      : NumericError(what), cap_(cap) {}
  long long cap() const noexcept { return cap_; }

private:
  long long cap_;
};

// Problem too large for a dense exact computation.
class CapacityError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Not enough (or degenerate) data for an estimator.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid tower construction (periodic support, zero mass, ...).
class ConstructionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Index outside the simulated window.
class IndexError : public std::out_of_range {
public:
  using std::out_of_range::out_of_range;
};

// A report could not be written.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace asiplab
