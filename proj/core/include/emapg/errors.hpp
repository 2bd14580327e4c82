#pragma once

#include <stdexcept>
#include <string>

namespace emapg {

// Raised when a value falls outside the mathematical domain of an operation
// (log of a nonpositive number, division by zero, inadmissible rewards).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid shapes, mismatched sizes, bad configuration values.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emapg
