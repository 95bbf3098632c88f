#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lsde {

/// Bad caller input: wrong dimensions, empty sets, malformed specs.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A time or index outside the supported span.
class OutOfRange : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Factorization or other numerical failure. Carries the last jitter tried.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, double jitter = 0.0)
      : std::runtime_error(what), jitter_(jitter) {}
  double jitter() const noexcept { return jitter_; }

 private:
  double jitter_;
};

/// Moment ODE blew up. `step` is the grid index (or iteration) where it happened.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Internal contract violation, e.g. using a model whose caches are stale.
class ConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace lsde
