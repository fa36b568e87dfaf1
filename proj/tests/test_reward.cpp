#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "carp/reward.hpp"
#include "test_support.hpp"

using namespace carp;
using carp::testing::linear_instance;
using carp::testing::tabular_instance;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

RewardParams random_params(std::mt19937_64& gen, RewardMode mode, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  RewardParams p;
  p.mode = mode;
  p.theta.resize(dim);
  for (double& v : p.theta) v = n(gen);
  return p;
}

Vector central_difference(RewardParams p, std::span<const PreferencePair> pairs, double k, double tau, double h) {
  Vector g(p.theta.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = p.theta[i];
    p.theta[i] = keep + h;
    const double up = total_loss(p, pairs, k, tau);
    p.theta[i] = keep - h;
    const double down = total_loss(p, pairs, k, tau);
    p.theta[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Exact coordinate minimization of the tabular loss: along one score the loss
// is convex, so bisection on its derivative finds the minimizer.
Vector coordinate_descent_oracle(std::span<const PreferencePair> pairs, std::size_t n, double k, int sweeps) {
  Vector r(n, 0.0);
  auto derivative = [&](std::size_t i, double v) {
    double d = 0.0;
    for (const auto& p : pairs) {
      if (p.chosen_id != i && p.rejected_id != i) continue;
      const double rc = p.chosen_id == i ? v : r[p.chosen_id];
      const double rr = p.rejected_id == i ? v : r[p.rejected_id];
      const double m = rc - rr + k * (p.sas_chosen - p.sas_rejected);
      const double coef = -1.0 / (1.0 + std::exp(m));
      d += p.chosen_id == i ? coef : -coef;
    }
    return d;
  };
  for (int s = 0; s < sweeps; ++s)
    for (std::size_t i = 0; i < n; ++i) {
      double lo = r[i] - 50.0, hi = r[i] + 50.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (derivative(i, mid) > 0.0 ? hi : lo) = mid;
      }
      r[i] = 0.5 * (lo + hi);
    }
  return r;
}

}  // namespace

TEST_CASE("sas offset and clipping") {
  CHECK(sas_offset(2.0, 0.5, 3.0, kInf) == 4.5);
  CHECK(sas_offset(2.0, 0.5, 3.0, 1.0) == 0.0);  // δ = 1.5 > τ
  CHECK(sas_offset(2.0, 0.5, 3.0, 1.5) == 4.5);  // δ = τ is kept
  CHECK(sas_offset(0.5, 2.0, 1.0, -10.0) == 0.0);
  CHECK(pair_loss(1.0, 0.0, 0.0, 0.0, 0.0, kInf) == doctest::Approx(std::log1p(std::exp(-1.0))));
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 gen(17);
  for (int inst = 0; inst < 20; ++inst) {
    const bool linear = inst % 2 == 0;
    const auto pairs = linear ? linear_instance(gen, 5, 30) : tabular_instance(gen, 12, 30);
    const RewardMode mode = linear ? RewardMode::kLinear : RewardMode::kTabular;
    const RewardParams p = random_params(gen, mode, reward_dim(pairs, mode));
    const double k = 0.5 * inst / 20.0 + 0.1;
    const double tau = inst % 3 == 0 ? 1.0 : kInf;
    const Vector g = batch_grad(p, pairs, k, tau);
    const Vector fd = central_difference(p, pairs, k, tau, 1e-6);
    Vector diff(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) diff[i] = g[i] - fd[i];
    CHECK(norm2(diff) / std::max(norm2(g), 1e-12) < 1e-5);
  }
}

TEST_CASE("zero SAS weight and fully clipped pairs reproduce vanilla training bitwise") {
  std::mt19937_64 gen(5);
  const auto pairs = linear_instance(gen, 4, 80);
  TrainConfig base;
  base.epochs = 40;
  base.lr = 0.3;
  base.batch = 16;
  TrainConfig vanilla = base;
  vanilla.sas_weight = 0.0;
  const TrainResult v = train(pairs, vanilla, RewardMode::kLinear);

  auto stripped = pairs;
  for (auto& p : stripped) p.sas_chosen = p.sas_rejected = 0.0;
  const TrainResult s = train(stripped, vanilla, RewardMode::kLinear);
  CHECK(v.params == s.params);
  CHECK(v.loss_curve == s.loss_curve);

  TrainConfig clipped = base;
  clipped.sas_weight = 2.0;
  clipped.safety_threshold = -1e9;  // every δ_sas exceeds τ
  const TrainResult c = train(pairs, clipped, RewardMode::kLinear);
  CHECK(c.params == v.params);
  CHECK(c.loss_curve == v.loss_curve);
}

TEST_CASE("curriculum epoch 0 is a vanilla update") {
  std::mt19937_64 gen(6);
  const auto pairs = linear_instance(gen, 3, 50);
  TrainConfig cur;
  cur.sas_weight = 1.5;
  cur.curriculum = true;
  cur.epochs = 1;
  cur.lr = 0.2;
  TrainConfig van = cur;
  van.sas_weight = 0.0;
  van.curriculum = false;
  CHECK(train(pairs, cur, RewardMode::kLinear).params == train(pairs, van, RewardMode::kLinear).params);
  cur.epochs = 2;
  van.epochs = 2;
  CHECK_FALSE(train(pairs, cur, RewardMode::kLinear).params == train(pairs, van, RewardMode::kLinear).params);
}

TEST_CASE("training lowers the loss and is deterministic") {
  std::mt19937_64 gen(7);
  const auto pairs = linear_instance(gen, 4, 100);
  TrainConfig c;
  c.sas_weight = 0.7;
  c.epochs = 50;
  c.batch = 10;
  c.seed = 3;
  const TrainResult a = train(pairs, c, RewardMode::kLinear);
  const TrainResult b = train(pairs, c, RewardMode::kLinear);
  CHECK(a.params == b.params);
  CHECK(a.loss_curve.back() < std::log(2.0) + 1.0);
  CHECK(a.epochs_run == 50);
  c.lr = 1e300;
  CHECK_THROWS_AS(train(pairs, c, RewardMode::kLinear), ConvergenceError);
}

TEST_CASE("full-batch tabular fit reaches the coordinate-descent optimum") {
  std::mt19937_64 gen(8);
  const auto pairs = tabular_instance(gen, 8, 40);
  TrainConfig c;
  c.sas_weight = 0.5;
  c.epochs = 200000;
  c.lr = 2.0;
  c.grad_tol = 1e-10;
  const TrainResult r = train(pairs, c, RewardMode::kTabular);
  REQUIRE(r.converged);
  const Vector oracle = coordinate_descent_oracle(pairs, 8, 0.5, 400);
  // Scores are identified up to a constant on the (connected) graph.
  const double shift = mean(r.params.theta) - mean(oracle);
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(r.params.theta[i] - oracle[i] - shift) < 1e-7);
}

TEST_CASE("shift proposition and ATE") {
  std::mt19937_64 gen(9);
  const auto pairs = tabular_instance(gen, 10, 50);
  TrainConfig base;
  base.epochs = 500000;
  base.lr = 2.0;
  for (double k : {0.0, 0.5, 2.0}) {
    const ShiftReport rep = proposition_shift_check(pairs, k, 1e-6, base);
    CHECK(rep.passed);
    CHECK(rep.max_deviation < 1e-6);
    CHECK(rep.components == 1);
    CHECK(rep.vanilla_grad_norm < 1e-10);
    CHECK(rep.sas_grad_norm < 1e-10);
    double total = 0.0;
    for (const auto& p : pairs) total += p.sas_rejected - p.sas_chosen;
    CHECK(ate_estimate(pairs, k) == k * (total / 50.0));
    CHECK(std::abs(ate_from_fits(pairs, rep.vanilla_scores, rep.sas_scores) - ate_estimate(pairs, k)) < 2e-6);
  }
}

TEST_CASE("shift check refuses unconverged fits") {
  std::mt19937_64 gen(10);
  const auto pairs = tabular_instance(gen, 6, 20);
  TrainConfig base;
  base.epochs = 3;
  CHECK_THROWS_AS(proposition_shift_check(pairs, 1.0, 1e-6, base), ConvergenceError);
}

TEST_CASE("comparison components") {
  std::vector<PreferencePair> pairs(2);
  pairs[0].chosen_id = 0;
  pairs[0].rejected_id = 1;
  pairs[1].chosen_id = 3;
  pairs[1].rejected_id = 4;
  const auto label = comparison_components(pairs, 6);
  CHECK(label[0] == label[1]);
  CHECK(label[3] == label[4]);
  CHECK(label[0] != label[3]);
  CHECK(label[2] != label[0]);
  CHECK(label[5] != label[3]);
}

TEST_CASE("input validation") {
  std::mt19937_64 gen(11);
  auto pairs = linear_instance(gen, 3, 5);
  pairs[2].features_rejected.pop_back();
  CHECK_THROWS_AS(train(pairs, TrainConfig{}, RewardMode::kLinear), DimensionError);
  pairs = linear_instance(gen, 3, 5);
  pairs[0].sas_chosen = -1.0;
  CHECK_THROWS_AS(train(pairs, TrainConfig{}, RewardMode::kLinear), DegenerateInputError);
  TrainConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(reward_mode_from_string(to_string(RewardMode::kTabular)) == RewardMode::kTabular);
  CHECK_THROWS_AS(reward_mode_from_string("quadratic"), ConfigError);
  std::vector<PreferencePair> none;
  CHECK_THROWS_AS(ate_estimate(none, 1.0), DegenerateInputError);
}
