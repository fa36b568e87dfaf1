#include "carp/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace carp {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    std::ostringstream err;
    err << "matrix data length " << data_.size() << " does not match " << rows << "x" << cols;
    throw DimensionError(err.str());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const { return carp::all_finite(data_); }

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    std::ostringstream err;
    err << "matvec: matrix has " << a.cols() << " columns but vector has " << x.size() << " entries";
    throw DimensionError(err.str());
  }
  Vector y(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      auto crow = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("matrix difference: shapes differ");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  return c;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) {
  // Scaled to stay finite for large entries.
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (double v : a) {
    const double q = v / scale;
    s += q * q;
  }
  return scale * std::sqrt(s);
}

double norm_inf(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double frobenius(const Matrix& a) { return norm2(a.data()); }

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

double mean(std::span<const double> a) {
  if (a.empty()) throw DegenerateInputError("mean of empty sample");
  double s = 0.0;
  for (double v : a) s += v;
  return s / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------

std::uint64_t mix64(std::uint64_t x) {
  // SplitMix64 finalizer.
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), key_(mix64(mix64(seed) ^ (stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL))) {}

Rng Rng::for_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return Rng(seed, mix64(tag * 0xA0761D6478BD642FULL) ^ index);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open0() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open0();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw DegenerateInputError("Rng::below(0)");
  // Rejection to avoid modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

Vector gaussian_vector(Rng& rng, std::size_t n, double scale) {
  Vector v(n);
  for (double& x : v) x = scale * rng.gaussian();
  return v;
}

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = scale * rng.gaussian();
  return m;
}

// ---------------------------------------------------------------------------

double operator_norm(const Matrix& a, PowerIterationOptions opts) {
  if (a.empty()) throw DimensionError("operator_norm: empty matrix");
  if (!(opts.tol > 0.0)) throw DegenerateInputError("operator_norm: tol must be positive");
  if (frobenius(a) == 0.0) return 0.0;

  const std::size_t n = a.cols();
  // Deterministic, generically non-orthogonal start.
  Vector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i % 7) + 1e-3 * static_cast<double>(i);
  double nv = norm2(v);
  for (double& x : v) x /= nv;

  double rayleigh = 0.0;
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    Vector av = matvec(a, v);
    Vector w(n, 0.0);  // Aᵀ A v
    for (std::size_t r = 0; r < a.rows(); ++r) {
      auto row = a.row(r);
      for (std::size_t c = 0; c < n; ++c) w[c] += row[c] * av[r];
    }
    rayleigh = dot(av, av);
    const double wn = norm2(w);
    if (wn == 0.0) {
      // Start vector in the null space; restart along a coordinate axis.
      std::fill(v.begin(), v.end(), 0.0);
      v[it % n] = 1.0;
      continue;
    }
    // Stop on the eigen-residual ‖AᵀAv − ρv‖ ≤ tol·ρ.
    double residual = 0.0;
    for (std::size_t c = 0; c < n; ++c) residual += (w[c] - rayleigh * v[c]) * (w[c] - rayleigh * v[c]);
    residual = std::sqrt(residual);
    for (std::size_t c = 0; c < n; ++c) v[c] = w[c] / wn;
    if (residual <= opts.tol * rayleigh) return std::sqrt(rayleigh);
  }
  throw ConvergenceError("operator_norm: power iteration did not converge", std::sqrt(rayleigh), v);
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double log_sigmoid(double t) {
  if (t >= 0.0) return -std::log1p(std::exp(-t));
  return t - std::log1p(std::exp(t));
}

// ---------------------------------------------------------------------------

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw ConvergenceError("incomplete_beta: continued fraction did not converge", h);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DegenerateInputError("incomplete_beta: a and b must be positive");
  if (x < 0.0 || x > 1.0) throw DegenerateInputError("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast for x < (a + 1) / (a + b + 2); use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw DegenerateInputError("student_t_two_sided_p: dof must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

PearsonResult pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("pearson: inputs have different lengths");
  if (a.size() < 3) throw DegenerateInputError("pearson: need at least 3 samples");
  const double n = static_cast<double>(a.size());
  const double ma = mean(a);
  const double mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateInputError("pearson: zero variance input");
  double r = sab / (std::sqrt(saa) * std::sqrt(sbb));
  r = std::clamp(r, -1.0, 1.0);
  PearsonResult out;
  out.r = r;
  const double dof = n - 2.0;
  if (std::abs(r) == 1.0) {
    out.p = 0.0;
  } else {
    const double t = r * std::sqrt(dof / (1.0 - r * r));
    out.p = student_t_two_sided_p(t, dof);
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix cholesky(const Matrix& a, double ridge) {
  if (a.rows() != a.cols()) throw DimensionError("cholesky: matrix is not square");
  if (ridge < 0.0) throw DegenerateInputError("cholesky: ridge must be nonnegative");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  double smallest = std::numeric_limits<double>::infinity();
  std::size_t smallest_at = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j) + ridge;
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (diag < smallest) {
      smallest = diag;
      smallest_at = j;
    }
    // Relative pivot floor: anything at rounding level is treated as singular.
    const double scale = std::abs(a(j, j)) + ridge;
    if (!(diag > 1e-14 * scale) || !(diag > 0.0)) {
      std::ostringstream err;
      err << "matrix is not positive definite: pivot " << j << " is " << diag
          << " (smallest pivot so far " << smallest << " at index " << smallest_at << ")";
      throw NumericError(err.str(), diag, j);
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix solve_spd(const Matrix& a, const Matrix& b, double ridge) {
  if (a.rows() != a.cols()) throw DimensionError("solve_spd: A is not square");
  if (b.cols() != a.rows()) throw DimensionError("solve_spd: B column count must match A");
  const Matrix l = cholesky(a, ridge);
  const std::size_t n = a.rows();
  // Each row x of X solves (A + λI) xᵀ = bᵀ because A is symmetric.
  Matrix x(b.rows(), n);
  Vector tmp(n);
  for (std::size_t r = 0; r < b.rows(); ++r) {
    auto rhs = b.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      double s = rhs[i];
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * tmp[k];
      tmp[i] = s / l(i, i);
    }
    auto out = x.row(r);
    for (std::size_t ii = n; ii-- > 0;) {
      double s = tmp[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * out[k];
      out[ii] = s / l(ii, ii);
    }
  }
  return x;
}

}  // namespace carp
