#pragma once

// Empirical checks of the flip, concentration and independence properties on
// the synthetic causal model.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "carp/causalgen.hpp"

namespace carp {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::map<std::string, double> values;
  std::string detail;
  double seconds = 0.0;
};

struct GridPoint {
  double ratio = 0.0;  // delta / sigma
  double sigma = 0.0;
  double delta = 0.0;
  double sigma_eff = 0.0;  // exact sub-Gaussian scale of the projected artifact
  double p_hat = 0.0;
  double ci_halfwidth = 0.0;
  double bound = 0.0;
  bool passed = false;
};

struct VerifyConfig {
  GenConfig flip_world = GenConfig::flip_reference();
  std::uint64_t seed = 20240611;

  std::size_t perturbations = 10000;

  std::vector<double> ratios{2.0, 4.0, 6.0, 8.0};
  std::vector<double> sigmas{0.5, 1.0, 2.0, 4.0};
  std::size_t grid_trials = 10000;
  double ci_multiplier = 3.0;

  double concentration_sigma = 0.1;
  double concentration_pflip_max = 1e-3;
  std::size_t concentration_small = 1000;     // NM
  std::size_t concentration_large = 100000;   // NM
  std::size_t concentration_seeds = 5;
  std::size_t oracle_samples = 200000;
  double concentration_ratio = 0.5;

  GenConfig eval_world = GenConfig::reference();
  std::size_t independence_samples = 1000;
  double corruption_max = 3.0;
  double artifact_r_max = 0.1;
  double corruption_r_min = 0.5;

  void validate() const;
};

/// Perturbations η with ‖Pη‖∞ < δ/2 added to margin-δ clean signals; passes
/// when no TopK index set changes.
PropertyResult check_deterministic_no_flip(const VerifyConfig& vc);

/// p_hat − c·CI ≤ 2k·exp(−δ²/8σ²) on every (δ/σ, σ) grid point.
PropertyResult check_bound_dominance(const VerifyConfig& vc, std::vector<GridPoint>* grid = nullptr);

/// One grid point; exposed for the σ = 0 corner and the CLI.
GridPoint bound_grid_point(const GenConfig& base, double delta, double sigma, std::size_t trials,
                           double ci_multiplier);

struct ConcentrationRow {
  std::size_t nm = 0;
  std::uint64_t seed = 0;
  double weight_op = 0.0;
  double bias_l2 = 0.0;
};

/// Median ‖L̂ − L⁽⁰⁾‖_op over seeds shrinks by the configured ratio from the
/// small to the large sample size.
PropertyResult check_concentration(const VerifyConfig& vc, std::vector<ConcentrationRow>* rows = nullptr);

/// SAS is uncorrelated with the artifact norm and correlated with the intent
/// displacement.
PropertyResult check_artifact_independence(const VerifyConfig& vc);

struct TheoryReport {
  std::vector<PropertyResult> properties;
  std::vector<GridPoint> grid;
  std::vector<ConcentrationRow> concentration;

  bool all_passed() const;
  std::string to_json() const;
  std::string grid_csv() const;
  std::string properties_csv() const;
};

TheoryReport verify_theory(const VerifyConfig& vc);

}  // namespace carp
