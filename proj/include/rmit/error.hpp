#pragma once

#include <stdexcept>
#include <string>

namespace rmit {

// A configuration value violates its documented domain (rates outside [0,1],
// unknown model variant, malformed transition matrix).
class InvalidSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Runtime data does not fit the contract (label out of range, ragged
// attribute vectors, shape mismatch, empty batch).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An object was used before it was built or trained.
class LifecycleError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite loss or logits.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rmit
