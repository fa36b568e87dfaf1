#pragma once

// Dense linear algebra, deterministic RNG and small statistics helpers.
// Everything is 64-bit and single-threaded; values are plain copyable types.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "carp/errors.hpp"

namespace carp {

using Vector = std::vector<double>;

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Matrix transpose() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Vector matvec(const Matrix& a, std::span<const double> x);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double norm_inf(std::span<const double> a);
double frobenius(const Matrix& a);
bool all_finite(std::span<const double> a);

// ---------------------------------------------------------------------------
// Counter-based RNG.
//
// Output i of stream (seed, stream) is a pure function of (seed, stream, i),
// so independent streams can be drawn in any order with identical results.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Derive an independent stream keyed by (tag, index), e.g. one per prompt.
  static Rng for_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in (0, 1]; safe for log().
  double uniform_open0();
  double gaussian();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

Vector gaussian_vector(Rng& rng, std::size_t n, double scale = 1.0);
Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0);

// ---------------------------------------------------------------------------

struct PowerIterationOptions {
  double tol = 1e-8;
  std::size_t max_iter = 10000;
};

/// Largest singular value via power iteration on AᵀA.
/// Throws ConvergenceError (carrying the last iterate) if tol is not reached.
double operator_norm(const Matrix& a, PowerIterationOptions opts = {});

double sigmoid(double t);
/// log(1 / (1 + exp(-t))) without overflow for large |t|.
double log_sigmoid(double t);

struct PearsonResult {
  double r = 0.0;
  double p = 1.0;
};

/// Sample Pearson correlation with a two-sided t-test p-value (n - 2 dof).
PearsonResult pearson(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

/// Two-sided p-value of a Student t statistic with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

/// Solves X (A + ridge·I) = B for symmetric positive definite A via Cholesky.
/// B has one row per right-hand side. Throws NumericError naming the
/// smallest pivot when the factorization fails.
Matrix solve_spd(const Matrix& a, const Matrix& b, double ridge = 0.0);

/// Lower-triangular Cholesky factor of A + ridge·I.
Matrix cholesky(const Matrix& a, double ridge = 0.0);

double mean(std::span<const double> a);

}  // namespace carp
