#pragma once

#include <stdexcept>
#include <string>

namespace nlmpc {

/// Violated precondition or shape contract of a public operation.
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value or other numeric failure, with the location it was detected.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Iterative method exceeded its iteration cap without meeting tolerance.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Configuration file or schema problem; message carries a JSON pointer path.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace nlmpc
