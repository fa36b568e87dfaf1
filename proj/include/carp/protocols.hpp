#pragma once

// Synthetic analogues of the evaluation protocols, built on a generated world
// and a decoder fitted to it.

#include <cstdint>
#include <vector>

#include "carp/causalgen.hpp"
#include "carp/decoder.hpp"
#include "carp/evalharness.hpp"

namespace carp {

struct EncodedDataset {
  std::vector<SparseCode> codes;
  std::vector<Vector> targets;      // prompt embedding of each response
  std::vector<std::size_t> prompt;  // prompt index of each response
};

EncodedDataset encode_dataset(const WorldMaps& world, const GenConfig& config,
                              const std::vector<PromptSample>& samples);

struct SyntheticWorld {
  GenConfig config;
  WorldMaps world;
  DecoderParams decoder;
};

/// Builds the world, samples N×M responses and fits the closed-form decoder.
SyntheticWorld fit_synthetic_decoder(const GenConfig& config);

double response_sas(const SyntheticWorld& sw, std::span<const double> y, std::span<const double> x);

/// Chosen: on-intent response at the configured artifact scale (item a).
/// Rewrite: same prompt, artifact scale multiplied by `artifact_ratio` (item b).
/// Scores are SAS; the chosen item is labeled preferred.
std::vector<EvalPair> rewrite_pairs(const SyntheticWorld& sw, std::size_t n, std::uint64_t seed,
                                    double artifact_ratio = 2.0);

/// Two on-intent responses with identical artifact scale and a preference
/// label drawn independently of both.
std::vector<EvalPair> reject_pairs(const SyntheticWorld& sw, std::size_t n, std::uint64_t seed);

struct IndependenceSample {
  std::vector<double> sas;
  std::vector<double> artifact_norm;  // ‖z‖₂
  std::vector<double> corruption;     // ‖w̃ − w‖₂
};

/// Fresh prompts answered by responses whose intent is displaced by a
/// magnitude drawn uniformly from [0, corruption_max].
IndependenceSample artifact_independence_sample(const SyntheticWorld& sw, std::size_t n, std::uint64_t seed,
                                                double corruption_max);

struct BonDesign {
  std::size_t candidates = 8;
  double artifact_scale_lo = 0.5;  // per-candidate multiplier of sigma_z
  double artifact_scale_hi = 2.5;
  double reward_artifact_coupling = 1.0;  // reward gains this much per unit ‖g(z)‖
  double reward_noise = 0.5;
  double corruption_max = 1.0;  // reward loses one unit per unit of corruption
};

/// Candidate sets whose reward rises with artifact magnitude ‖g(z)‖₂; SAS is
/// scored by the fitted decoder.
std::vector<BonCandidateSet> bon_candidate_sets(const SyntheticWorld& sw, std::size_t n_sets, std::uint64_t seed,
                                                const BonDesign& design = {});

struct BonComparison {
  double vanilla_artifact_mean = 0.0;
  double weighted_artifact_mean = 0.0;
  double vanilla_sas_mean = 0.0;
  double weighted_sas_mean = 0.0;
};

BonComparison compare_best_of_n(std::span<const BonCandidateSet> sets, double sas_weight);

}  // namespace carp
