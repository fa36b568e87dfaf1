#include "carp/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace carp {

namespace {

// Accumulates first and second moments of (u, x) pairs using the kept list of
// each code, in a fixed sample order.
class MomentAccumulator {
 public:
  MomentAccumulator(std::size_t width, std::size_t prompt_dim)
      : sum_u_(width, 0.0), sum_x_(prompt_dim, 0.0), uu_(width, width), xu_(prompt_dim, width) {}

  void add(const SparseCode& u, std::span<const double> x) {
    if (u.width() != sum_u_.size()) throw DimensionError("decoder fit: inconsistent code width");
    if (x.size() != sum_x_.size()) throw DimensionError("decoder fit: inconsistent prompt dimension");
    ++n_;
    for (std::size_t i = 0; i < x.size(); ++i) sum_x_[i] += x[i];
    for (const auto& [a, va] : u.kept) {
      sum_u_[a] += va;
      for (const auto& [b, vb] : u.kept) uu_(a, b) += va * vb;
      for (std::size_t r = 0; r < x.size(); ++r) xu_(r, a) += x[r] * va;
    }
  }

  std::size_t count() const { return n_; }

  struct Moments {
    Vector mean_u, mean_x;
    Matrix cov_uu, cov_xu;
  };

  Moments centered() const {
    const double n = static_cast<double>(n_);
    Moments m;
    m.mean_u = sum_u_;
    for (double& v : m.mean_u) v /= n;
    m.mean_x = sum_x_;
    for (double& v : m.mean_x) v /= n;
    m.cov_uu = uu_;
    for (std::size_t a = 0; a < uu_.rows(); ++a)
      for (std::size_t b = 0; b < uu_.cols(); ++b) m.cov_uu(a, b) = uu_(a, b) / n - m.mean_u[a] * m.mean_u[b];
    m.cov_xu = xu_;
    for (std::size_t r = 0; r < xu_.rows(); ++r)
      for (std::size_t a = 0; a < xu_.cols(); ++a) m.cov_xu(r, a) = xu_(r, a) / n - m.mean_x[r] * m.mean_u[a];
    return m;
  }

 private:
  std::size_t n_ = 0;
  Vector sum_u_, sum_x_;
  Matrix uu_, xu_;
};

void check_fit_inputs(std::span<const SparseCode> codes, std::span<const Vector> targets) {
  if (codes.size() != targets.size()) {
    std::ostringstream err;
    err << "decoder fit: " << codes.size() << " codes but " << targets.size() << " targets";
    throw DimensionError(err.str());
  }
  if (codes.empty()) throw DegenerateInputError("decoder fit: no samples");
}

Vector solve_bias(const Matrix& weight, const Vector& mean_u, const Vector& mean_x) {
  Vector lu = matvec(weight, mean_u);
  Vector b = mean_x;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lu[i];
  return b;
}

}  // namespace

Vector DecoderParams::predict(const SparseCode& u) const {
  if (u.width() != weight.cols()) {
    std::ostringstream err;
    err << "decoder expects code width " << weight.cols() << ", got " << u.width();
    throw DimensionError(err.str());
  }
  Vector out = bias;
  for (const auto& [i, v] : u.kept)
    for (std::size_t r = 0; r < out.size(); ++r) out[r] += weight(r, i) * v;
  return out;
}

double default_ridge(std::span<const SparseCode> codes) {
  if (codes.empty()) throw DegenerateInputError("default_ridge: no samples");
  const std::size_t width = codes.front().width();
  Vector sum(width, 0.0), sq(width, 0.0);
  for (const auto& c : codes)
    for (const auto& [i, v] : c.kept) {
      sum[i] += v;
      sq[i] += v * v;
    }
  const double n = static_cast<double>(codes.size());
  double trace = 0.0;
  for (std::size_t i = 0; i < width; ++i) trace += sq[i] / n - (sum[i] / n) * (sum[i] / n);
  return 1e-6 * std::max(trace, 0.0) / static_cast<double>(width);
}

DecoderParams fit_closed_form(std::span<const SparseCode> codes, std::span<const Vector> targets,
                              std::optional<double> ridge) {
  check_fit_inputs(codes, targets);
  const double lambda = ridge.value_or(default_ridge(codes));
  if (!(lambda >= 0.0)) throw DegenerateInputError("fit_closed_form: ridge must be >= 0");
  MomentAccumulator acc(codes.front().width(), targets.front().size());
  for (std::size_t i = 0; i < codes.size(); ++i) acc.add(codes[i], targets[i]);
  const auto m = acc.centered();

  DecoderParams params;
  try {
    params.weight = solve_spd(m.cov_uu, m.cov_xu, lambda);
  } catch (const NumericError& e) {
    std::ostringstream err;
    err << "fit_closed_form: code covariance is singular with ridge " << lambda
        << "; use a positive ridge (" << e.what() << ")";
    throw NumericError(err.str(), e.pivot(), e.pivot_index());
  }
  params.bias = solve_bias(params.weight, m.mean_u, m.mean_x);
  params.meta.fit_method = "closed_form";
  params.meta.ridge = lambda;
  params.meta.samples = codes.size();
  params.meta.train_loss_final = mean_squared_error(params, codes, targets);
  return params;
}

double mean_squared_error(const DecoderParams& params, std::span<const SparseCode> codes,
                          std::span<const Vector> targets) {
  check_fit_inputs(codes, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < codes.size(); ++i) total += sas(params, codes[i], targets[i]);
  return total / static_cast<double>(codes.size());
}

double ridge_objective(const DecoderParams& params, std::span<const SparseCode> codes,
                       std::span<const Vector> targets, double ridge) {
  const double f = frobenius(params.weight);
  return mean_squared_error(params, codes, targets) + ridge * f * f;
}

double sas(const DecoderParams& params, const SparseCode& u, std::span<const double> x) {
  if (x.size() != params.bias.size()) {
    std::ostringstream err;
    err << "sas: prompt embedding has " << x.size() << " entries, decoder outputs " << params.bias.size();
    throw DimensionError(err.str());
  }
  const Vector pred = params.predict(u);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = pred[i] - x[i];
    s += e * e;
  }
  return s;
}

namespace {

double cosine_loss(std::span<const double> pred, std::span<const double> x) {
  const double np = norm2(pred);
  const double nx = norm2(x);
  if (np == 0.0 || nx == 0.0) return 1.0;
  return 1.0 - dot(pred, x) / (np * nx);
}

double epoch_loss(const DecoderParams& p, std::span<const SparseCode> codes, std::span<const Vector> targets,
                  DecoderLoss loss) {
  if (loss == DecoderLoss::kMse) return mean_squared_error(p, codes, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < codes.size(); ++i) total += cosine_loss(p.predict(codes[i]), targets[i]);
  return total / static_cast<double>(codes.size());
}

}  // namespace

std::pair<DecoderParams, FitReport> fit_sgd(std::span<const SparseCode> codes, std::span<const Vector> targets,
                                            const SgdOptions& opts) {
  check_fit_inputs(codes, targets);
  if (!(opts.lr >= 0.0)) throw DegenerateInputError("fit_sgd: lr must be >= 0");
  if (opts.epochs < 1) throw DegenerateInputError("fit_sgd: epochs must be >= 1");
  if (opts.batch < 1) throw DegenerateInputError("fit_sgd: batch must be >= 1");
  const std::size_t n = codes.size();
  const std::size_t width = codes.front().width();
  const std::size_t dx = targets.front().size();

  DecoderParams p;
  p.weight = Matrix(dx, width);
  p.bias = Vector(dx, 0.0);
  p.meta.fit_method = opts.loss == DecoderLoss::kMse ? "sgd_mse" : "sgd_cosine";
  p.meta.epochs = opts.epochs;
  p.meta.lr = opts.lr;
  p.meta.samples = n;

  FitReport report;
  report.nm = n;

  std::vector<std::size_t> order(n);
  Matrix grad_w(dx, width);
  Vector grad_b(dx);
  Vector err(dx);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = Rng::for_stream(opts.seed, stream::kShuffle, epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t start = 0; start < n; start += opts.batch) {
      const std::size_t stop = std::min(n, start + opts.batch);
      const double scale = 1.0 / static_cast<double>(stop - start);
      std::fill(grad_w.data().begin(), grad_w.data().end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (std::size_t s = start; s < stop; ++s) {
        const SparseCode& u = codes[order[s]];
        const Vector& x = targets[order[s]];
        const Vector pred = p.predict(u);
        if (opts.loss == DecoderLoss::kMse) {
          for (std::size_t r = 0; r < dx; ++r) err[r] = 2.0 * (pred[r] - x[r]);
        } else {
          // ∂(1 − cos(p, x))/∂p
          const double np = norm2(pred);
          const double nx = norm2(x);
          if (nx == 0.0) {
            std::fill(err.begin(), err.end(), 0.0);
          } else if (np == 0.0) {
            for (std::size_t r = 0; r < dx; ++r) err[r] = -x[r] / nx;
          } else {
            const double c = dot(pred, x) / (np * nx);
            for (std::size_t r = 0; r < dx; ++r) err[r] = -(x[r] / (np * nx) - c * pred[r] / (np * np));
          }
        }
        for (std::size_t r = 0; r < dx; ++r) grad_b[r] += err[r];
        for (const auto& [i, v] : u.kept)
          for (std::size_t r = 0; r < dx; ++r) grad_w(r, i) += err[r] * v;
      }
      for (std::size_t k = 0; k < grad_w.data().size(); ++k) p.weight.data()[k] -= opts.lr * scale * grad_w.data()[k];
      for (std::size_t r = 0; r < dx; ++r) p.bias[r] -= opts.lr * scale * grad_b[r];
    }
    const double loss = epoch_loss(p, codes, targets, opts.loss);
    if (!std::isfinite(loss) || loss > 1e12) {
      std::ostringstream msg;
      msg << "fit_sgd diverged at epoch " << epoch << " (loss " << loss << "); lower the learning rate";
      throw ConvergenceError(msg.str(), loss, p.weight.data());
    }
    report.sgd_loss_curve.push_back(loss);
  }
  p.meta.train_loss_final = report.sgd_loss_curve.back();
  return {std::move(p), std::move(report)};
}

DecoderParams ideal_params_oracle(const WorldMaps& world, const GenConfig& config, std::size_t mc_samples) {
  if (mc_samples < 10000) throw DegenerateInputError("ideal_params_oracle: need at least 1e4 Monte-Carlo samples");
  config.validate();
  MomentAccumulator acc(config.sae_width, config.d_x);
  for (std::size_t t = 0; t < mc_samples; ++t) {
    Rng rng = Rng::for_stream(config.seed, stream::kIdealOracle, t);
    const Intent intent = draw_intent(world, config, rng);
    const Vector s = matvec(world.proj, intent.clean_signal);
    acc.add(encode_projected(s, config.topk), intent.x);
  }
  const auto m = acc.centered();
  DecoderParams p;
  try {
    p.weight = solve_spd(m.cov_uu, m.cov_xu, 0.0);
  } catch (const NumericError& e) {
    std::ostringstream err;
    err << "ideal_params_oracle: ideal code covariance is numerically singular; increase mc_samples or use a "
           "world where every coordinate can be selected ("
        << e.what() << ")";
    throw NumericError(err.str(), e.pivot(), e.pivot_index());
  }
  p.bias = solve_bias(p.weight, m.mean_u, m.mean_x);
  p.meta.fit_method = "ideal_oracle";
  p.meta.samples = mc_samples;
  return p;
}

ConcentrationDistance concentration_report(const DecoderParams& fitted, const DecoderParams& ideal) {
  if (fitted.weight.rows() != ideal.weight.rows() || fitted.weight.cols() != ideal.weight.cols() ||
      fitted.bias.size() != ideal.bias.size())
    throw DimensionError("concentration_report: decoder shapes differ");
  ConcentrationDistance d;
  d.weight_op = operator_norm(fitted.weight - ideal.weight);
  Vector db = fitted.bias;
  for (std::size_t i = 0; i < db.size(); ++i) db[i] -= ideal.bias[i];
  d.bias_l2 = norm2(db);
  return d;
}

}  // namespace carp
