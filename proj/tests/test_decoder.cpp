#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "carp/decoder.hpp"
#include "carp/protocols.hpp"
#include "test_support.hpp"

using namespace carp;

namespace {

struct Problem {
  std::vector<SparseCode> codes;
  std::vector<Vector> targets;
};

Problem random_problem(std::uint64_t seed, std::size_t n, std::size_t width, std::size_t k, std::size_t dx) {
  Rng rng(seed);
  const Matrix l = gaussian_matrix(rng, dx, width);
  Problem p;
  for (std::size_t i = 0; i < n; ++i) {
    p.codes.push_back(encode_projected(gaussian_vector(rng, width), k));
    Vector x = matvec(l, p.codes.back().dense);
    for (double& v : x) v += 0.3 + 0.1 * rng.gaussian();
    p.targets.push_back(x);
  }
  return p;
}

// Ridge with an unpenalized intercept, solved as an augmented least-squares
// problem [U_c; sqrt(nλ) I] Lᵀ = [X_c; 0] by complete orthogonal decomposition.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> oracle_fit(const Problem& p, double ridge) {
  const std::size_t n = p.codes.size(), w = p.codes[0].width(), dx = p.targets[0].size();
  Eigen::MatrixXd u(n, w), x(n, dx);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < w; ++j) u(i, j) = p.codes[i].dense[j];
    for (std::size_t j = 0; j < dx; ++j) x(i, j) = p.targets[i][j];
  }
  const Eigen::RowVectorXd mu = u.colwise().mean(), mx = x.colwise().mean();
  Eigen::MatrixXd a(n + w, w), b(n + w, dx);
  a.topRows(n) = u.rowwise() - mu;
  a.bottomRows(w) = std::sqrt(static_cast<double>(n) * ridge) * Eigen::MatrixXd::Identity(w, w);
  b.topRows(n) = x.rowwise() - mx;
  b.bottomRows(w).setZero();
  const Eigen::MatrixXd lt = a.completeOrthogonalDecomposition().solve(b);
  const Eigen::MatrixXd l = lt.transpose();
  const Eigen::VectorXd bias = mx.transpose() - l * mu.transpose();
  return {l, bias};
}

double max_abs_diff(const DecoderParams& d, const Eigen::MatrixXd& l, const Eigen::VectorXd& b) {
  double m = 0.0;
  for (std::size_t r = 0; r < d.weight.rows(); ++r) {
    for (std::size_t c = 0; c < d.weight.cols(); ++c) m = std::max(m, std::abs(d.weight(r, c) - l(r, c)));
    m = std::max(m, std::abs(d.bias[r] - b(r)));
  }
  return m;
}

}  // namespace

TEST_CASE("closed form matches the least-squares oracle") {
  const Problem p = random_problem(1, 400, 10, 4, 3);
  for (double ridge : {0.0, 1e-3, 0.5}) {
    const DecoderParams d = fit_closed_form(p.codes, p.targets, ridge);
    const auto [l, b] = oracle_fit(p, ridge);
    CHECK(max_abs_diff(d, l, b) < 1e-9);
    CHECK(d.meta.ridge == ridge);
    CHECK(d.meta.fit_method == "closed_form");
  }
}

TEST_CASE("closed form minimizes the ridge objective") {
  const Problem p = random_problem(2, 300, 8, 3, 2);
  const double ridge = 0.05;
  DecoderParams d = fit_closed_form(p.codes, p.targets, ridge);
  const double best = ridge_objective(d, p.codes, p.targets, ridge);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    DecoderParams e = d;
    for (double& v : e.weight.data()) v += 1e-3 * rng.gaussian();
    for (double& v : e.bias) v += 1e-3 * rng.gaussian();
    CHECK(ridge_objective(e, p.codes, p.targets, ridge) >= best);
  }
}

TEST_CASE("singular code covariance needs a ridge") {
  // Coordinate 3 is never selected.
  std::vector<SparseCode> codes;
  std::vector<Vector> targets;
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    Vector v{rng.gaussian(), rng.gaussian(), rng.gaussian(), 0.0};
    codes.push_back(encode_projected(v, 2));
    targets.push_back({rng.gaussian()});
  }
  CHECK_THROWS_AS(fit_closed_form(codes, targets, 0.0), NumericError);
  CHECK_NOTHROW(fit_closed_form(codes, targets));
  CHECK(default_ridge(codes) > 0.0);
}

TEST_CASE("fit input validation") {
  std::vector<SparseCode> none;
  std::vector<Vector> empty;
  CHECK_THROWS(fit_closed_form(none, empty));
  const Problem p = random_problem(5, 10, 6, 2, 2);
  std::vector<Vector> short_targets(p.targets.begin(), p.targets.end() - 1);
  CHECK_THROWS_AS(fit_closed_form(p.codes, short_targets), DimensionError);
}

TEST_CASE("sas is the squared reconstruction error") {
  const Problem p = random_problem(6, 100, 6, 2, 3);
  const DecoderParams d = fit_closed_form(p.codes, p.targets);
  const Vector pred = matvec(d.weight, p.codes[0].dense);
  double manual = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double e = pred[i] + d.bias[i] - p.targets[0][i];
    manual += e * e;
  }
  CHECK(sas(d, p.codes[0], p.targets[0]) == doctest::Approx(manual).epsilon(1e-12));
  CHECK(sas(d, p.codes[0], p.targets[0]) >= 0.0);
  CHECK_THROWS_AS(sas(d, p.codes[0], Vector(2)), DimensionError);
}

TEST_CASE("sgd approaches the closed form") {
  const Problem p = random_problem(7, 1000, 8, 3, 2);
  const DecoderParams cf = fit_closed_form(p.codes, p.targets, 0.0);
  SgdOptions o;
  o.lr = 0.05;
  o.epochs = 200;
  o.batch = 50;
  const auto [d, rep] = fit_sgd(p.codes, p.targets, o);
  REQUIRE(rep.sgd_loss_curve.size() == 200);
  CHECK(rep.sgd_loss_curve.back() < rep.sgd_loss_curve.front());
  CHECK(mean_squared_error(d, p.codes, p.targets) <= 1.01 * mean_squared_error(cf, p.codes, p.targets));
  const auto [d2, rep2] = fit_sgd(p.codes, p.targets, o);
  CHECK(d2 == d);

  o.loss = DecoderLoss::kCosine;
  o.epochs = 30;
  const auto [dc, repc] = fit_sgd(p.codes, p.targets, o);
  CHECK(repc.sgd_loss_curve.back() < repc.sgd_loss_curve.front());
  CHECK(dc.meta.fit_method == "sgd_cosine");

  o.loss = DecoderLoss::kMse;
  o.lr = 1e6;
  o.epochs = 5;
  CHECK_THROWS_AS(fit_sgd(p.codes, p.targets, o), ConvergenceError);
}

TEST_CASE("concentration distance uses the operator norm") {
  const Problem p = random_problem(8, 200, 6, 2, 3);
  const DecoderParams a = fit_closed_form(p.codes, p.targets, 0.0);
  DecoderParams b = a;
  Rng rng(9);
  for (double& v : b.weight.data()) v += 0.1 * rng.gaussian();
  const ConcentrationDistance d = concentration_report(a, b);
  const double oracle =
      Eigen::JacobiSVD<Eigen::MatrixXd>(carp::testing::to_eigen(a.weight - b.weight)).singularValues()(0);
  CHECK(d.weight_op == doctest::Approx(oracle).epsilon(1e-8));
  CHECK(d.bias_l2 == 0.0);
  DecoderParams c = a;
  c.weight = Matrix(2, 6);
  CHECK_THROWS_AS(concentration_report(a, c), DimensionError);
}

TEST_CASE("ideal oracle refuses a world where some coordinate is never selected") {
  GenConfig c;
  c.d_x = 3;
  c.d_w = 1;
  c.d = 6;
  c.sae_width = 8;
  c.topk = 2;
  c.sigma_z = 0.1;
  const WorldMaps w = build_world(c);
  CHECK_THROWS_AS(ideal_params_oracle(w, c, 10000), NumericError);
  CHECK_THROWS_AS(ideal_params_oracle(w, c, 10), DegenerateInputError);
}

TEST_CASE("fitted decoder approaches the ideal decoder as data grows") {
  GenConfig c = GenConfig::flip_reference();
  c.sigma_z = 0.1;
  const WorldMaps w = build_world(c);
  const DecoderParams ideal = ideal_params_oracle(w, c, 50000);
  auto distance = [&](std::size_t prompts) {
    GenConfig s = c;
    s.n_prompts = prompts;
    s.seed = 31;
    const auto data = encode_dataset(w, s, sample_dataset(w, s));
    return concentration_report(fit_closed_form(data.codes, data.targets), ideal).weight_op;
  };
  CHECK(distance(5000) < distance(250));
}
