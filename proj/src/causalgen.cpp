#include "carp/causalgen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace carp {

std::string to_string(Nonlinearity n) { return n == Nonlinearity::kTanh ? "tanh" : "linear"; }

Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "linear") return Nonlinearity::kLinear;
  if (s == "tanh") return Nonlinearity::kTanh;
  throw ConfigError("unknown nonlinearity '" + s + "' (expected linear or tanh)");
}

void GenConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  };
  positive(d_x, "d_x");
  positive(d_w, "d_w");
  positive(d_z, "d_z");
  positive(d, "d");
  positive(sae_width, "sae_width");
  positive(topk, "topk");
  positive(n_prompts, "n_prompts");
  positive(n_responses, "n_responses");
  if (topk > sae_width) throw ConfigError("topk must not exceed sae_width");
  if (!(sigma_z >= 0.0) || !std::isfinite(sigma_z)) throw ConfigError("sigma_z must be finite and >= 0");
  if (!(margin_target >= 0.0) || !std::isfinite(margin_target)) throw ConfigError("margin_target must be finite and >= 0");
  if (margin_target > 0.0 && topk >= sae_width) throw ConfigError("margin enforcement needs topk < sae_width");
  if (!(min_relative_margin >= 0.0) || min_relative_margin >= 1.0)
    throw ConfigError("min_relative_margin must lie in [0, 1)");
  if (identity_f && d_w != d) throw ConfigError("identity_f requires d_w == d");
}

GenConfig GenConfig::reference() {
  GenConfig c;
  c.d_x = 16;
  c.d_w = 8;
  c.d_z = 16;
  c.d = 16;
  c.sae_width = 32;
  c.topk = 24;
  c.n_prompts = 2000;
  c.n_responses = 4;
  c.sigma_z = 0.3;
  c.margin_target = 0.0;
  c.min_relative_margin = 0.05;
  c.nonlinearity = Nonlinearity::kLinear;
  c.seed = 20240611;
  return c;
}

GenConfig GenConfig::flip_reference() {
  GenConfig c;
  c.d_x = 16;
  c.d_w = 16;
  c.d_z = 16;
  c.d = 32;
  c.sae_width = 64;
  c.topk = 8;
  c.n_prompts = 2000;
  c.n_responses = 4;
  c.sigma_z = 1.0;
  c.margin_target = 2.0;
  c.min_relative_margin = 0.05;
  c.nonlinearity = Nonlinearity::kLinear;
  c.seed = 20240611;
  return c;
}

namespace {

void apply_nonlinearity(Nonlinearity n, Vector& v) {
  if (n == Nonlinearity::kTanh)
    for (double& x : v) x = std::tanh(x);
}

}  // namespace

WorldMaps build_world(const GenConfig& config) {
  config.validate();
  Rng rng = Rng::for_stream(config.seed, stream::kWorld, 0);
  WorldMaps world;
  world.nonlinearity = config.nonlinearity;
  world.a_xw = gaussian_matrix(rng, config.d_x, config.d_w, 1.0 / std::sqrt(static_cast<double>(config.d_w)));
  if (config.identity_f) {
    world.a_f = Matrix::identity(config.d);
  } else {
    world.a_f = gaussian_matrix(rng, config.d, config.d_w, 1.0 / std::sqrt(static_cast<double>(config.d_w)));
  }

  world.proj = gaussian_matrix(rng, config.sae_width, config.d);
  for (std::size_t r = 0; r < config.sae_width; ++r) {
    auto row = world.proj.row(r);
    double n = norm2(row);
    while (n == 0.0) {  // measure-zero; redraw
      for (double& v : row) v = rng.gaussian();
      n = norm2(row);
    }
    for (double& v : row) v /= n;
  }

  world.a_g = gaussian_matrix(rng, config.d, config.d_z);
  if (config.d > 1) {
    for (std::size_t c = 0; c < config.d_z; ++c) {
      double m = 0.0;
      for (std::size_t r = 0; r < config.d; ++r) m += world.a_g(r, c);
      m /= static_cast<double>(config.d);
      for (std::size_t r = 0; r < config.d; ++r) world.a_g(r, c) -= m;
    }
  }
  // Normalize so that max_r ‖A_gᵀ p_r‖₂ = 1: sigma_z is then the exact
  // sub-Gaussian parameter of every projected artifact coordinate.
  const Matrix pg = matmul(world.proj, world.a_g);
  double worst = 0.0;
  for (std::size_t r = 0; r < pg.rows(); ++r) worst = std::max(worst, norm2(pg.row(r)));
  if (worst > 0.0)
    for (double& v : world.a_g.data()) v /= worst;
  return world;
}

double compute_margin(std::span<const double> s, std::size_t k) {
  if (k == 0 || k >= s.size()) {
    std::ostringstream err;
    err << "compute_margin: need 1 <= K < dim, got K=" << k << " dim=" << s.size();
    throw DimensionError(err.str());
  }
  Vector mags(s.size());
  std::transform(s.begin(), s.end(), mags.begin(), [](double v) { return std::abs(v); });
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k - 1), mags.end(), std::greater<>());
  const double kth = mags[k - 1];
  const double next = *std::max_element(mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
  return kth - next;
}

Vector apply_f(const WorldMaps& world, std::span<const double> w) {
  Vector f = matvec(world.a_f, w);
  apply_nonlinearity(world.nonlinearity, f);
  return f;
}

Vector apply_g(const WorldMaps& world, std::span<const double> z) {
  Vector g = matvec(world.a_g, z);
  apply_nonlinearity(world.nonlinearity, g);
  return g;
}

Vector apply_prompt_map(const WorldMaps& world, std::span<const double> w) {
  Vector x = matvec(world.a_xw, w);
  apply_nonlinearity(world.nonlinearity, x);
  return x;
}

bool realize_intent(const WorldMaps& world, const GenConfig& config, const Vector& w, Intent& out) {
  Vector f = apply_f(world, w);
  double margin = 0.0;
  if (config.margin_target > 0.0) {
    Vector s = matvec(world.proj, f);
    const double peak = norm_inf(s);
    margin = compute_margin(s, config.topk);
    if (peak == 0.0 || margin <= config.min_relative_margin * peak) {
      if (config.min_relative_margin > 0.0) return false;
      throw DegenerateInputError(
          "cannot enforce TopK margin: the K-th and (K+1)-th magnitudes of Pf(w) coincide");
    }
    if (margin < config.margin_target) {
      // Scale the whole signal; direction of Pf(w) is preserved.
      // The margin is checked on P(c·f), exactly what downstream code sees.
      double c = config.margin_target / margin;
      for (int guard = 0;; ++guard) {
        Vector scaled = f;
        for (double& v : scaled) v *= c;
        const double m = compute_margin(matvec(world.proj, scaled), config.topk);
        if (m >= config.margin_target) {
          margin = m;
          f = std::move(scaled);
          break;
        }
        if (guard > 64) throw DegenerateInputError("cannot enforce TopK margin: rescaling did not converge");
        c = std::nextafter(c, INFINITY) * (1.0 + 1e-15);
      }
    }
  }
  out.w = w;
  out.x = apply_prompt_map(world, w);
  out.clean_signal = std::move(f);
  out.margin = margin;
  return true;
}

Intent draw_intent(const WorldMaps& world, const GenConfig& config, Rng& rng) {
  constexpr int kMaxRedraws = 10000;
  Intent intent;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Vector w = gaussian_vector(rng, config.d_w);
    if (realize_intent(world, config, w, intent)) return intent;
  }
  throw DegenerateInputError("cannot enforce TopK margin: no intent with sufficient relative margin after " +
                             std::to_string(kMaxRedraws) + " draws; lower min_relative_margin");
}

Vector draw_artifact(const GenConfig& config, Rng& rng) {
  if (config.sigma_z == 0.0) return Vector(config.d_z, 0.0);
  return gaussian_vector(rng, config.d_z, config.sigma_z);
}

Intent corrupt_intent(const WorldMaps& world, const GenConfig& config, const Vector& w, double magnitude, Rng& rng) {
  constexpr int kMaxRedraws = 10000;
  Intent out;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Vector dir = gaussian_vector(rng, config.d_w);
    const double n = norm2(dir);
    if (n == 0.0) continue;
    Vector moved = w;
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += magnitude * dir[i] / n;
    if (realize_intent(world, config, moved, out)) return out;
  }
  throw DegenerateInputError("corrupt_intent: no admissible corrupted intent found");
}

Vector respond(const WorldMaps& world, const GenConfig& config, const Vector& clean_signal, double artifact_scale,
               Rng& rng, Vector* z_out) {
  GenConfig scaled = config;
  scaled.sigma_z = config.sigma_z * artifact_scale;
  Vector z = draw_artifact(scaled, rng);
  const Vector g = apply_g(world, z);
  Vector y = clean_signal;
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += g[k];
  if (z_out) *z_out = std::move(z);
  return y;
}

std::vector<PromptSample> sample_dataset(const WorldMaps& world, const GenConfig& config) {
  config.validate();
  std::vector<PromptSample> out;
  out.reserve(config.n_prompts);
  for (std::size_t i = 0; i < config.n_prompts; ++i) {
    Rng intent_rng = Rng::for_stream(config.seed, stream::kIntent, i);
    Rng artifact_rng = Rng::for_stream(config.seed, stream::kArtifact, i);
    Intent intent = draw_intent(world, config, intent_rng);
    PromptSample sample;
    sample.prompt_id = i;
    sample.w = std::move(intent.w);
    sample.x = std::move(intent.x);
    sample.clean_signal = std::move(intent.clean_signal);
    sample.responses.reserve(config.n_responses);
    for (std::size_t j = 0; j < config.n_responses; ++j) {
      Response r;
      r.z = draw_artifact(config, artifact_rng);
      const Vector g = apply_g(world, r.z);
      r.y = sample.clean_signal;
      for (std::size_t k = 0; k < r.y.size(); ++k) r.y[k] += g[k];
      sample.responses.push_back(std::move(r));
    }
    out.push_back(std::move(sample));
  }
  return out;
}

double artifact_subgaussian_scale(const WorldMaps& world, const GenConfig& config) {
  const Matrix pg = matmul(world.proj, world.a_g);
  double worst = 0.0;
  for (std::size_t r = 0; r < pg.rows(); ++r) worst = std::max(worst, norm2(pg.row(r)));
  return config.sigma_z * worst;
}

}  // namespace carp
