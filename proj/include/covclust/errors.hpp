#pragma once

#include <stdexcept>
#include <string>

namespace covclust {

/// Shapes of two operands disagree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite or out-of-range numeric input.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Malformed user input (files, ids, parameters).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Internal bookkeeping mismatch, e.g. an ADMM state that does not fit its graph.
struct ConsistencyError : std::logic_error {
  using std::logic_error::logic_error;
};

/// An iterative method failed; `what()` carries the diagnostics.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A quantity that must be finite or signed came out wrong.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace covclust
