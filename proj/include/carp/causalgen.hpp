#pragma once

// Synthetic structural model: latent intention w drives the prompt x = h(w)
// and the clean response signal f(w); an independent artifact z adds g(z) to
// every response, y = f(w) + g(z).

#include <cstdint>
#include <string>
#include <vector>

#include "carp/numkit.hpp"

namespace carp {

enum class Nonlinearity { kLinear, kTanh };

std::string to_string(Nonlinearity n);
Nonlinearity nonlinearity_from_string(const std::string& s);

struct GenConfig {
  std::size_t d_x = 8;
  std::size_t d_w = 4;
  std::size_t d_z = 16;
  std::size_t d = 32;
  std::size_t sae_width = 64;
  std::size_t topk = 8;
  std::size_t n_prompts = 256;
  std::size_t n_responses = 4;
  /// Sub-Gaussian scale of every projected artifact coordinate pᵣᵀg(z).
  double sigma_z = 1.0;
  /// Minimum TopK margin of P f(w); 0 disables enforcement.
  double margin_target = 0.0;
  /// Intents whose margin is below this fraction of ‖Pf(w)‖∞ are redrawn
  /// before rescaling. Only used when margin_target > 0.
  double min_relative_margin = 0.05;
  Nonlinearity nonlinearity = Nonlinearity::kLinear;
  /// Forces A_f = I (requires d_w == d).
  bool identity_f = false;
  std::uint64_t seed = 1;

  void validate() const;

  /// Frozen evaluation world: decoder, SAS and selection experiments.
  static GenConfig reference();
  /// Frozen flip-probability world: width 64, K = 8, margin 2, sigma 1.
  static GenConfig flip_reference();
};

struct WorldMaps {
  Matrix a_xw;  // d_x × d_w
  Matrix a_f;   // d × d_w
  Matrix a_g;   // d × d_z
  Matrix proj;  // sae_width × d, unit-norm rows
  Nonlinearity nonlinearity = Nonlinearity::kLinear;

  friend bool operator==(const WorldMaps&, const WorldMaps&) = default;
};

struct Response {
  Vector z;
  Vector y;
};

struct PromptSample {
  std::size_t prompt_id = 0;
  Vector w;
  Vector x;
  Vector clean_signal;  // f(w), after margin rescaling
  std::vector<Response> responses;
};

/// One intent draw: w, its prompt embedding and clean signal.
struct Intent {
  Vector w;
  Vector x;
  Vector clean_signal;
  double margin = 0.0;  // TopK margin of P·clean_signal
};

// RNG stream tags; every random quantity lives on its own stream.
namespace stream {
inline constexpr std::uint64_t kWorld = 1;
inline constexpr std::uint64_t kIntent = 2;
inline constexpr std::uint64_t kArtifact = 3;
inline constexpr std::uint64_t kFlipTrial = 4;
inline constexpr std::uint64_t kIdealOracle = 5;
inline constexpr std::uint64_t kShuffle = 6;
inline constexpr std::uint64_t kEval = 7;
inline constexpr std::uint64_t kCorruption = 8;
inline constexpr std::uint64_t kPerturbation = 9;
inline constexpr std::uint64_t kPreference = 10;
inline constexpr std::uint64_t kCandidates = 11;
}  // namespace stream

WorldMaps build_world(const GenConfig& config);

/// |s|_(K) − |s|_(K+1) with |s|_(r) the r-th largest magnitude.
double compute_margin(std::span<const double> s, std::size_t k);

Vector apply_f(const WorldMaps& world, std::span<const double> w);
Vector apply_g(const WorldMaps& world, std::span<const double> z);
Vector apply_prompt_map(const WorldMaps& world, std::span<const double> w);

/// Draws w ~ N(0, I) from `rng` and builds (x, f(w)) with the margin
/// enforced. Throws DegenerateInputError when the margin cannot be enforced.
Intent draw_intent(const WorldMaps& world, const GenConfig& config, Rng& rng);

/// Builds (x, f(w)) for a given w with the margin enforced.
/// Returns false if w must be redrawn (relative margin too small).
bool realize_intent(const WorldMaps& world, const GenConfig& config, const Vector& w, Intent& out);

Vector draw_artifact(const GenConfig& config, Rng& rng);

/// Intent displaced from `w` by exactly `magnitude` along a random direction:
/// a response written for a different intention than the prompt's.
Intent corrupt_intent(const WorldMaps& world, const GenConfig& config, const Vector& w, double magnitude, Rng& rng);

/// Clean signal plus g(z) for a freshly drawn z scaled by `artifact_scale`·sigma_z.
Vector respond(const WorldMaps& world, const GenConfig& config, const Vector& clean_signal, double artifact_scale,
               Rng& rng, Vector* z_out = nullptr);

std::vector<PromptSample> sample_dataset(const WorldMaps& world, const GenConfig& config);

/// Exact sub-Gaussian parameter of pᵣᵀ g(z) maximized over rows r (linear g).
double artifact_subgaussian_scale(const WorldMaps& world, const GenConfig& config);

}  // namespace carp
