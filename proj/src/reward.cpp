#include "carp/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "carp/causalgen.hpp"

namespace carp {

std::string to_string(RewardMode m) { return m == RewardMode::kTabular ? "tabular" : "linear"; }

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "linear") return RewardMode::kLinear;
  if (s == "tabular") return RewardMode::kTabular;
  throw ConfigError("unknown reward mode '" + s + "' (expected linear or tabular)");
}

namespace {

double linear_score(const Vector& theta, const Vector& features) {
  if (theta.size() != features.size()) {
    std::ostringstream err;
    err << "reward: theta has " << theta.size() << " entries, features have " << features.size();
    throw DimensionError(err.str());
  }
  return dot(theta, features);
}

double table_score(const Vector& theta, std::size_t id) {
  if (id >= theta.size()) {
    std::ostringstream err;
    err << "reward: response id " << id << " outside score table of size " << theta.size();
    throw DimensionError(err.str());
  }
  return theta[id];
}

}  // namespace

double RewardParams::score_chosen(const PreferencePair& p) const {
  return mode == RewardMode::kLinear ? linear_score(theta, p.features_chosen) : table_score(theta, p.chosen_id);
}

double RewardParams::score_rejected(const PreferencePair& p) const {
  return mode == RewardMode::kLinear ? linear_score(theta, p.features_rejected) : table_score(theta, p.rejected_id);
}

void TrainConfig::validate() const {
  if (!(sas_weight >= 0.0) || !std::isfinite(sas_weight)) throw ConfigError("sas_weight must be finite and >= 0");
  if (std::isnan(safety_threshold)) throw ConfigError("safety_threshold must not be NaN");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and > 0");
  if (!(grad_tol >= 0.0)) throw ConfigError("grad_tol must be >= 0");
}

double sas_offset(double s_c, double s_r, double k_eff, double tau) {
  const double delta = s_c - s_r;
  const double thresholded = delta <= tau ? delta : 0.0;
  return k_eff * thresholded;
}

namespace {

// Logit of one pair; the offset is added only when nonzero so that k = 0 and
// clipped pairs evaluate exactly the vanilla expression.
double pair_logit(double r_c, double r_r, double offset) {
  double m = r_c - r_r;
  if (offset != 0.0) m += offset;
  return m;
}

}  // namespace

double pair_loss(double r_c, double r_r, double s_c, double s_r, double k_eff, double tau) {
  return -log_sigmoid(pair_logit(r_c, r_r, sas_offset(s_c, s_r, k_eff, tau)));
}

double total_loss(const RewardParams& params, std::span<const PreferencePair> pairs, double k_eff, double tau) {
  double total = 0.0;
  for (const auto& p : pairs)
    total += pair_loss(params.score_chosen(p), params.score_rejected(p), p.sas_chosen, p.sas_rejected, k_eff, tau);
  return total;
}

Vector batch_grad(const RewardParams& params, std::span<const PreferencePair> pairs, double k_eff, double tau) {
  Vector grad(params.theta.size(), 0.0);
  for (const auto& p : pairs) {
    const double m = pair_logit(params.score_chosen(p), params.score_rejected(p),
                                sas_offset(p.sas_chosen, p.sas_rejected, k_eff, tau));
    // σ(m) − 1 = −σ(−m), exact for large m.
    const double coef = -sigmoid(-m);
    if (params.mode == RewardMode::kLinear) {
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += coef * (p.features_chosen[i] - p.features_rejected[i]);
    } else {
      grad[p.chosen_id] += coef;
      grad[p.rejected_id] -= coef;
    }
  }
  return grad;
}

std::size_t reward_dim(std::span<const PreferencePair> pairs, RewardMode mode) {
  if (pairs.empty()) throw DegenerateInputError("reward: no preference pairs");
  if (mode == RewardMode::kLinear) {
    const std::size_t dim = pairs.front().features_chosen.size();
    for (const auto& p : pairs)
      if (p.features_chosen.size() != dim || p.features_rejected.size() != dim)
        throw DimensionError("reward: pair '" + p.pair_id + "' has inconsistent feature dimensions");
    return dim;
  }
  std::size_t max_id = 0;
  for (const auto& p : pairs) max_id = std::max({max_id, p.chosen_id, p.rejected_id});
  return max_id + 1;
}

TrainResult train(std::span<const PreferencePair> pairs, const TrainConfig& config, RewardMode mode) {
  config.validate();
  const std::size_t dim = reward_dim(pairs, mode);
  for (const auto& p : pairs)
    if (!(p.sas_chosen >= 0.0) || !(p.sas_rejected >= 0.0))
      throw DegenerateInputError("reward: pair '" + p.pair_id + "' has negative or NaN SAS");

  TrainResult result;
  result.params.mode = mode;
  result.params.theta.assign(dim, 0.0);
  const std::size_t n = pairs.size();
  const std::size_t batch = (config.batch == 0 || config.batch >= n) ? n : config.batch;
  const bool full_batch = batch == n;

  std::vector<std::size_t> order(n);
  std::vector<PreferencePair> minibatch;
  double k_eff = config.sas_weight;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    k_eff = (config.curriculum && epoch == 0) ? 0.0 : config.sas_weight;
    if (full_batch) {
      const Vector g = batch_grad(result.params, pairs, k_eff, config.safety_threshold);
      result.final_grad_norm = norm2(g);
      if (config.grad_tol > 0.0 && result.final_grad_norm < config.grad_tol) {
        result.converged = true;
        break;
      }
      const double step = config.lr / static_cast<double>(n);
      for (std::size_t i = 0; i < dim; ++i) result.params.theta[i] -= step * g[i];
    } else {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle = Rng::for_stream(config.seed, stream::kShuffle, epoch);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t stop = std::min(n, start + batch);
        minibatch.clear();
        for (std::size_t s = start; s < stop; ++s) minibatch.push_back(pairs[order[s]]);
        const Vector g = batch_grad(result.params, minibatch, k_eff, config.safety_threshold);
        const double step = config.lr / static_cast<double>(stop - start);
        for (std::size_t i = 0; i < dim; ++i) result.params.theta[i] -= step * g[i];
      }
    }
    const double loss = total_loss(result.params, pairs, k_eff, config.safety_threshold) / static_cast<double>(n);
    if (!std::isfinite(loss) || loss > 1e12 || !all_finite(result.params.theta)) {
      std::ostringstream msg;
      msg << "reward training diverged at epoch " << epoch << " (mean loss " << loss << "); lower the learning rate";
      throw ConvergenceError(msg.str(), loss, result.params.theta);
    }
    result.loss_curve.push_back(loss);
    result.epochs_run = epoch + 1;
  }
  result.final_grad_norm = norm2(batch_grad(result.params, pairs, k_eff, config.safety_threshold));
  if (config.grad_tol > 0.0 && result.final_grad_norm < config.grad_tol) result.converged = true;
  return result;
}

std::vector<std::size_t> comparison_components(std::span<const PreferencePair> pairs, std::size_t n_responses) {
  std::vector<std::size_t> parent(n_responses);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  for (const auto& p : pairs) {
    const std::size_t a = find(p.chosen_id);
    const std::size_t b = find(p.rejected_id);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::size_t> label(n_responses);
  for (std::size_t i = 0; i < n_responses; ++i) label[i] = find(i);
  return label;
}

namespace {

// SAS per response id; a response must carry the same SAS in every pair.
Vector response_sas(std::span<const PreferencePair> pairs, std::size_t n) {
  Vector s(n, std::numeric_limits<double>::quiet_NaN());
  auto set = [&](std::size_t id, double v, const std::string& pair_id) {
    if (std::isnan(s[id])) {
      s[id] = v;
    } else if (s[id] != v) {
      std::ostringstream err;
      err << "shift check: response " << id << " has inconsistent SAS across pairs (pair '" << pair_id << "')";
      throw DegenerateInputError(err.str());
    }
  };
  for (const auto& p : pairs) {
    set(p.chosen_id, p.sas_chosen, p.pair_id);
    set(p.rejected_id, p.sas_rejected, p.pair_id);
  }
  return s;
}

}  // namespace

ShiftReport proposition_shift_check(std::span<const PreferencePair> pairs, double k, double tol,
                                    const TrainConfig& base) {
  const std::size_t n = reward_dim(pairs, RewardMode::kTabular);
  ShiftReport report;
  report.response_sas = response_sas(pairs, n);

  TrainConfig cfg = base;
  cfg.safety_threshold = std::numeric_limits<double>::infinity();
  cfg.curriculum = false;
  cfg.batch = 0;
  if (!(cfg.grad_tol > 0.0)) cfg.grad_tol = 1e-10;

  cfg.sas_weight = 0.0;
  const TrainResult vanilla = train(pairs, cfg, RewardMode::kTabular);
  cfg.sas_weight = k;
  const TrainResult regularized = train(pairs, cfg, RewardMode::kTabular);
  report.vanilla_grad_norm = vanilla.final_grad_norm;
  report.sas_grad_norm = regularized.final_grad_norm;
  if (!vanilla.converged || !regularized.converged) {
    std::ostringstream err;
    err << "shift check invalid: fits did not reach gradient norm " << cfg.grad_tol << " (vanilla "
        << vanilla.final_grad_norm << ", SAS " << regularized.final_grad_norm << ")";
    throw ConvergenceError(err.str(), std::max(vanilla.final_grad_norm, regularized.final_grad_norm));
  }
  report.vanilla_scores = vanilla.params.theta;
  report.sas_scores = regularized.params.theta;

  // D = r̂_n − r̂_nSAS − k s is constant on each component at the optimum.
  const auto label = comparison_components(pairs, n);
  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  Vector deviation(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(report.response_sas[i])) continue;  // id never compared
    deviation[i] = report.vanilla_scores[i] - report.sas_scores[i] - k * report.response_sas[i];
    sum[label[i]] += deviation[i];
    ++count[label[i]];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i] > 0) ++report.components;
    if (std::isnan(report.response_sas[i])) continue;
    const double centered = deviation[i] - sum[label[i]] / static_cast<double>(count[label[i]]);
    report.max_deviation = std::max(report.max_deviation, std::abs(centered));
  }
  report.passed = report.max_deviation < tol;
  return report;
}

double ate_estimate(std::span<const PreferencePair> pairs, double k) {
  if (pairs.empty()) throw DegenerateInputError("ate_estimate: no pairs");
  double total = 0.0;
  for (const auto& p : pairs) total += p.sas_rejected - p.sas_chosen;
  return k * (total / static_cast<double>(pairs.size()));
}

double ate_from_fits(std::span<const PreferencePair> pairs, const Vector& vanilla_scores, const Vector& sas_scores) {
  if (pairs.empty()) throw DegenerateInputError("ate_from_fits: no pairs");
  double total = 0.0;
  for (const auto& p : pairs) {
    const double gap_sas = sas_scores.at(p.chosen_id) - sas_scores.at(p.rejected_id);
    const double gap_vanilla = vanilla_scores.at(p.chosen_id) - vanilla_scores.at(p.rejected_id);
    total += gap_sas - gap_vanilla;
  }
  return total / static_cast<double>(pairs.size());
}

}  // namespace carp
