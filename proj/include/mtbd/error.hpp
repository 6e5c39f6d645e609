#pragma once

#include <stdexcept>
#include <string>

namespace mtbd {

// Bad input: malformed files, violated invariants, unknown options.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Solver failures, rejection budgets, explosion guards.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 1 - p_root(t_root) underflowed to zero; the conditional density is undefined.
class SurvivalUnderflow : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace mtbd
