#pragma once

#include <stdexcept>
#include <string>

namespace aspdc {

// Shape disagreement between operands. Messages carry both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated an API precondition (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A forward op produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration (unknown keys, empty branch set, bad values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem / codec failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace aspdc
