#pragma once

// TopK sparse encoding u = TopK(P y) and flip-event bookkeeping.

#include <cstdint>
#include <utility>
#include <vector>

#include "carp/causalgen.hpp"
#include "carp/numkit.hpp"

namespace carp {

using IndexSet = std::vector<std::size_t>;  // sorted, unique

/// TopK code stored densely, with the kept (index, value) list alongside.
struct SparseCode {
  std::vector<std::pair<std::size_t, double>> kept;  // strictly increasing indices
  Vector dense;                                      // zeros outside kept

  std::size_t width() const { return dense.size(); }
  IndexSet indices() const;
};

/// Indices of the K largest |v_j|, ties to the lower index; returned sorted.
IndexSet topk_select(std::span<const double> v, std::size_t k);

SparseCode encode(const Matrix& proj, std::span<const double> y, std::size_t k);

/// Keeps the coordinates of an already projected vector.
SparseCode encode_projected(std::span<const double> projected, std::size_t k);

/// Rebuilds a code from its dense form (for example a stored code row); the
/// kept list is the nonzero coordinates.
SparseCode sparse_from_dense(std::span<const double> dense);

struct FlipRecord {
  std::size_t prompt_id = 0;
  std::size_t response_index = 0;
  IndexSet ideal_indices;
  IndexSet real_indices;
  bool flipped = false;
};

FlipRecord detect_flip(const Matrix& proj, std::span<const double> clean_signal, std::span<const double> y,
                       std::size_t k);

/// min(1, 2k·exp(−δ²/(8σ²))), k being the SAE width.
double pflip_bound(std::size_t sae_width, double delta, double sigma);

struct FlipEstimate {
  double p_hat = 0.0;
  double ci_halfwidth = 0.0;  // normal-approximation 95%
  std::size_t trials = 0;
  std::size_t flips = 0;
};

/// Monte-Carlo flip frequency over fresh (w, z) draws; trial t uses its own
/// counter-based stream so the estimate does not depend on evaluation order.
FlipEstimate estimate_pflip(const WorldMaps& world, const GenConfig& config, std::size_t trials);

}  // namespace carp
