#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace carp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Inputs that make a statistic undefined (zero variance, empty sample...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Factorization or solve failed; carries the offending pivot.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, double pivot = 0.0, std::size_t pivot_index = 0)
      : Error(what), pivot_(pivot), pivot_index_(pivot_index) {}
  double pivot() const { return pivot_; }
  std::size_t pivot_index() const { return pivot_index_; }

 private:
  double pivot_;
  std::size_t pivot_index_;
};

/// Iterative method ran out of iterations or diverged.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_value, std::vector<double> last_iterate = {})
      : Error(what), last_value_(last_value), last_iterate_(std::move(last_iterate)) {}
  double last_value() const { return last_value_; }
  const std::vector<double>& last_iterate() const { return last_iterate_; }

 private:
  double last_value_;
  std::vector<double> last_iterate_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated artifact on disk.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace carp
