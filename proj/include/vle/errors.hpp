#pragma once

#include <stdexcept>
#include <string>

namespace vle {

/// Raised when a caller violates a documented precondition (shape, range, mode).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a computation produces or receives a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on malformed or incompatible files (checkpoints, configs, images).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace vle
