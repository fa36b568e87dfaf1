#pragma once

// Bradley–Terry reward training with an additive SAS offset inside the
// sigmoid:  L = −Σ log σ((r_c − r_r) + k_eff · δ_thres),
// δ_sas = s_c − s_r,  δ_thres = δ_sas if δ_sas ≤ τ else 0.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "carp/numkit.hpp"

namespace carp {

struct PreferencePair {
  std::string pair_id;
  std::size_t chosen_id = 0;
  std::size_t rejected_id = 0;
  Vector features_chosen;
  Vector features_rejected;
  double sas_chosen = 0.0;
  double sas_rejected = 0.0;
};

enum class RewardMode { kLinear, kTabular };

std::string to_string(RewardMode m);
RewardMode reward_mode_from_string(const std::string& s);

/// Linear: r = θ·φ. Tabular: one free score per response id.
struct RewardParams {
  RewardMode mode = RewardMode::kLinear;
  Vector theta;

  double score_chosen(const PreferencePair& p) const;
  double score_rejected(const PreferencePair& p) const;

  friend bool operator==(const RewardParams&, const RewardParams&) = default;
};

struct TrainConfig {
  double sas_weight = 0.0;  // k
  double safety_threshold = std::numeric_limits<double>::infinity();  // τ
  std::size_t epochs = 100;
  double lr = 0.1;
  std::size_t batch = 0;  // 0 = full batch
  bool curriculum = false;
  std::uint64_t seed = 1;
  /// Stop once the full-batch gradient norm of the summed loss drops below
  /// this value (full-batch only; 0 disables).
  double grad_tol = 0.0;

  void validate() const;
};

/// k_eff · δ_thres for one pair.
double sas_offset(double s_c, double s_r, double k_eff, double tau);

double pair_loss(double r_c, double r_r, double s_c, double s_r, double k_eff, double tau);

/// Summed loss over pairs.
double total_loss(const RewardParams& params, std::span<const PreferencePair> pairs, double k_eff, double tau);

/// Analytic gradient of the summed loss:
/// Σ [σ(Δr + k_eff δ_thres) − 1] (∂r_c/∂θ − ∂r_r/∂θ).
Vector batch_grad(const RewardParams& params, std::span<const PreferencePair> pairs, double k_eff, double tau);

/// Parameter count implied by the pairs: feature dimension or max id + 1.
std::size_t reward_dim(std::span<const PreferencePair> pairs, RewardMode mode);

struct TrainResult {
  RewardParams params;
  std::vector<double> loss_curve;  // mean loss after each epoch, at that epoch's k_eff
  std::size_t epochs_run = 0;
  double final_grad_norm = 0.0;  // summed-loss gradient at the final k_eff
  bool converged = false;        // grad_tol reached
};

/// Gradient descent from θ = 0. Epochs are numbered from 0; with curriculum
/// the SAS term is off in epoch 0 (k_eff = k · 1[epoch ≥ 1]).
TrainResult train(std::span<const PreferencePair> pairs, const TrainConfig& config, RewardMode mode);

struct ShiftReport {
  double max_deviation = 0.0;  // max |r̂_n − r̂_nSAS − k s| after gauge alignment
  bool passed = false;
  std::size_t components = 0;
  Vector vanilla_scores;
  Vector sas_scores;
  Vector response_sas;
  double vanilla_grad_norm = 0.0;
  double sas_grad_norm = 0.0;
};

/// Fits tabular vanilla and SAS-regularized rewards (τ = ∞, no curriculum)
/// to `base.grad_tol` and measures the shift identity r̂_n − r̂_nSAS = k·s.
/// Scores are compared after removing the mean per connected comparison
/// component. Throws ConvergenceError if either fit does not converge.
ShiftReport proposition_shift_check(std::span<const PreferencePair> pairs, double k, double tol,
                                    const TrainConfig& base);

/// k · mean(s_r − s_c).
double ate_estimate(std::span<const PreferencePair> pairs, double k);

/// Mean over pairs of the SAS-run reward gap minus the vanilla-run gap.
double ate_from_fits(std::span<const PreferencePair> pairs, const Vector& vanilla_scores, const Vector& sas_scores);

/// Connected component label per response id (ids that appear in no pair
/// get their own singleton label).
std::vector<std::size_t> comparison_components(std::span<const PreferencePair> pairs, std::size_t n_responses);

}  // namespace carp
