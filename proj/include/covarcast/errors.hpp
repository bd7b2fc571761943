#pragma once

#include <stdexcept>
#include <string>

namespace covarcast {

/// Input or configuration that violates a documented precondition.
/// The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical or I/O failure while doing otherwise valid work (exit code 2).
class ComputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace covarcast
