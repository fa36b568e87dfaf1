#include "carp/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace carp {

IndexSet SparseCode::indices() const {
  IndexSet out;
  out.reserve(kept.size());
  for (const auto& [i, v] : kept) out.push_back(i);
  return out;
}

IndexSet topk_select(std::span<const double> v, std::size_t k) {
  if (k > v.size()) {
    std::ostringstream err;
    err << "topk_select: K=" << k << " exceeds dimension " << v.size();
    throw DimensionError(err.str());
  }
  IndexSet order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(v[a]);
    const double mb = std::abs(v[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

SparseCode encode_projected(std::span<const double> projected, std::size_t k) {
  SparseCode code;
  code.dense.assign(projected.size(), 0.0);
  for (std::size_t i : topk_select(projected, k)) {
    code.kept.emplace_back(i, projected[i]);
    code.dense[i] = projected[i];
  }
  return code;
}

SparseCode sparse_from_dense(std::span<const double> dense) {
  SparseCode code;
  code.dense.assign(dense.begin(), dense.end());
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (dense[i] != 0.0) code.kept.emplace_back(i, dense[i]);
  return code;
}

SparseCode encode(const Matrix& proj, std::span<const double> y, std::size_t k) {
  if (proj.cols() != y.size()) {
    std::ostringstream err;
    err << "encode: projection expects dimension " << proj.cols() << ", response has " << y.size();
    throw DimensionError(err.str());
  }
  if (k > proj.rows()) throw DimensionError("encode: K exceeds SAE width");
  return encode_projected(matvec(proj, y), k);
}

FlipRecord detect_flip(const Matrix& proj, std::span<const double> clean_signal, std::span<const double> y,
                       std::size_t k) {
  if (proj.cols() != clean_signal.size() || proj.cols() != y.size())
    throw DimensionError("detect_flip: signal dimensions do not match the projection");
  FlipRecord rec;
  rec.ideal_indices = topk_select(matvec(proj, clean_signal), k);
  rec.real_indices = topk_select(matvec(proj, y), k);
  rec.flipped = rec.ideal_indices != rec.real_indices;
  return rec;
}

double pflip_bound(std::size_t sae_width, double delta, double sigma) {
  if (!(delta > 0.0) || !(sigma > 0.0)) throw DegenerateInputError("pflip_bound: delta and sigma must be positive");
  const double bound = 2.0 * static_cast<double>(sae_width) * std::exp(-(delta * delta) / (8.0 * sigma * sigma));
  return std::min(1.0, bound);
}

FlipEstimate estimate_pflip(const WorldMaps& world, const GenConfig& config, std::size_t trials) {
  if (trials < 100) throw DegenerateInputError("estimate_pflip: need at least 100 trials");
  config.validate();
  FlipEstimate est;
  est.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = Rng::for_stream(config.seed, stream::kFlipTrial, t);
    const Intent intent = draw_intent(world, config, rng);
    const Vector z = draw_artifact(config, rng);
    const Vector g = apply_g(world, z);
    Vector y = intent.clean_signal;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += g[i];
    if (detect_flip(world.proj, intent.clean_signal, y, config.topk).flipped) ++est.flips;
  }
  const double n = static_cast<double>(trials);
  est.p_hat = static_cast<double>(est.flips) / n;
  est.ci_halfwidth = 1.96 * std::sqrt(est.p_hat * (1.0 - est.p_hat) / n);
  return est;
}

}  // namespace carp
