#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hpf {

// Error categories used across the library. All derive from std::exception
// through the standard hierarchy so callers may catch broadly.

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Feature vector outside the region covered by a (hierarchical) partition.
class OutOfDomain : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ResourceLimit : public std::length_error {
 public:
  using std::length_error::length_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A runtime regularity condition of a regret bound was violated (for example a
// gradient whose norm exceeds the configured bound G).
class ContractViolation : public std::runtime_error {
 public:
  ContractViolation(const std::string& what, std::size_t round)
      : std::runtime_error(what), round_(round) {}

  /// Round (1-based) at which the violation was detected, 0 if not round-specific.
  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

}  // namespace hpf
