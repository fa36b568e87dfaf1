#pragma once

// Prompt decoder: affine map (L, b) from sparse response codes to prompt
// embeddings. SAS is its squared reconstruction error.

#include <optional>
#include <string>
#include <vector>

#include "carp/causalgen.hpp"
#include "carp/encoder.hpp"
#include "carp/numkit.hpp"

namespace carp {

struct DecoderMeta {
  std::string fit_method;  // "closed_form", "sgd_mse", "sgd_cosine", "ideal_oracle"
  double ridge = 0.0;
  std::size_t epochs = 0;
  double lr = 0.0;
  double train_loss_final = 0.0;
  std::size_t samples = 0;

  friend bool operator==(const DecoderMeta&, const DecoderMeta&) = default;
};

struct DecoderParams {
  Matrix weight;  // d_x × sae_width
  Vector bias;    // d_x
  DecoderMeta meta;

  std::size_t prompt_dim() const { return weight.rows(); }
  std::size_t code_dim() const { return weight.cols(); }
  Vector predict(const SparseCode& u) const;

  friend bool operator==(const DecoderParams&, const DecoderParams&) = default;
};

struct FitReport {
  std::size_t nm = 0;
  std::optional<double> closed_form_residual;
  std::vector<double> sgd_loss_curve;
  std::optional<double> op_distance_to_ideal;
};

/// 1e−6 · trace(Σ̂_uu) / sae_width.
double default_ridge(std::span<const SparseCode> codes);

/// Centered ridge least squares: L̂ = Σ̂_xu (Σ̂_uu + ridge·I)⁻¹, b̂ = x̄ − L̂ū.
/// With ridge unset, default_ridge(codes) is used.
DecoderParams fit_closed_form(std::span<const SparseCode> codes, std::span<const Vector> targets,
                              std::optional<double> ridge = std::nullopt);

/// (1/n) Σ ‖L u + b − x‖² + ridge ‖L‖_F²
double ridge_objective(const DecoderParams& params, std::span<const SparseCode> codes,
                       std::span<const Vector> targets, double ridge);

double mean_squared_error(const DecoderParams& params, std::span<const SparseCode> codes,
                          std::span<const Vector> targets);

enum class DecoderLoss { kMse, kCosine };

struct SgdOptions {
  double lr = 1e-2;
  std::size_t epochs = 10;
  std::size_t batch = 128;
  std::uint64_t seed = 1;
  DecoderLoss loss = DecoderLoss::kMse;
};

/// Minibatch gradient descent from zero initialization. The loss curve holds
/// the full-data objective after each epoch.
std::pair<DecoderParams, FitReport> fit_sgd(std::span<const SparseCode> codes, std::span<const Vector> targets,
                                            const SgdOptions& opts);

/// ‖L̂u + b̂ − x‖²; lower means the response better realizes the prompt.
double sas(const DecoderParams& params, const SparseCode& u, std::span<const double> x);

/// Population decoder on artifact-free ideal-index codes I_{J_w} P f(w),
/// estimated from `mc_samples` fresh intents.
DecoderParams ideal_params_oracle(const WorldMaps& world, const GenConfig& config, std::size_t mc_samples);

struct ConcentrationDistance {
  double weight_op = 0.0;  // ‖L̂ − L⁽⁰⁾‖_op
  double bias_l2 = 0.0;    // ‖b̂ − b⁽⁰⁾‖₂
};

ConcentrationDistance concentration_report(const DecoderParams& fitted, const DecoderParams& ideal);

}  // namespace carp
