#include "carp/protocols.hpp"

#include <sstream>

namespace carp {

EncodedDataset encode_dataset(const WorldMaps& world, const GenConfig& config,
                              const std::vector<PromptSample>& samples) {
  EncodedDataset out;
  for (const auto& p : samples) {
    for (const auto& r : p.responses) {
      out.codes.push_back(encode(world.proj, r.y, config.topk));
      out.targets.push_back(p.x);
      out.prompt.push_back(p.prompt_id);
    }
  }
  return out;
}

SyntheticWorld fit_synthetic_decoder(const GenConfig& config) {
  SyntheticWorld sw;
  sw.config = config;
  sw.world = build_world(config);
  const auto samples = sample_dataset(sw.world, config);
  const auto data = encode_dataset(sw.world, config, samples);
  sw.decoder = fit_closed_form(data.codes, data.targets);
  return sw;
}

double response_sas(const SyntheticWorld& sw, std::span<const double> y, std::span<const double> x) {
  return sas(sw.decoder, encode(sw.world.proj, y, sw.config.topk), x);
}

namespace {

std::string numbered(const char* prefix, std::size_t i) {
  std::ostringstream s;
  s << prefix << i;
  return s.str();
}

}  // namespace

std::vector<EvalPair> rewrite_pairs(const SyntheticWorld& sw, std::size_t n, std::uint64_t seed,
                                    double artifact_ratio) {
  std::vector<EvalPair> pairs;
  pairs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    Rng rng = Rng::for_stream(seed, stream::kEval, t);
    const Intent intent = draw_intent(sw.world, sw.config, rng);
    const Vector chosen = respond(sw.world, sw.config, intent.clean_signal, 1.0, rng);
    const Vector rewrite = respond(sw.world, sw.config, intent.clean_signal, artifact_ratio, rng);
    EvalPair p;
    p.pair_id = numbered("rewrite-", t);
    p.score_a = response_sas(sw, chosen, intent.x);
    p.score_b = response_sas(sw, rewrite, intent.x);
    p.label = Preferred::kA;
    p.domain_tag = "rewrite";
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<EvalPair> reject_pairs(const SyntheticWorld& sw, std::size_t n, std::uint64_t seed) {
  std::vector<EvalPair> pairs;
  pairs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    Rng rng = Rng::for_stream(seed, stream::kEval, t);
    const Intent intent = draw_intent(sw.world, sw.config, rng);
    const Vector a = respond(sw.world, sw.config, intent.clean_signal, 1.0, rng);
    const Vector b = respond(sw.world, sw.config, intent.clean_signal, 1.0, rng);
    EvalPair p;
    p.pair_id = numbered("reject-", t);
    p.score_a = response_sas(sw, a, intent.x);
    p.score_b = response_sas(sw, b, intent.x);
    p.label = rng.uniform() < 0.5 ? Preferred::kA : Preferred::kB;
    p.domain_tag = "reject";
    pairs.push_back(std::move(p));
  }
  return pairs;
}

IndependenceSample artifact_independence_sample(const SyntheticWorld& sw, std::size_t n, std::uint64_t seed,
                                                double corruption_max) {
  IndependenceSample out;
  for (std::size_t t = 0; t < n; ++t) {
    Rng rng = Rng::for_stream(seed, stream::kCorruption, t);
    const Intent intent = draw_intent(sw.world, sw.config, rng);
    const double magnitude = corruption_max * rng.uniform();
    const Intent answered = corrupt_intent(sw.world, sw.config, intent.w, magnitude, rng);
    Vector z;
    const Vector y = respond(sw.world, sw.config, answered.clean_signal, 1.0, rng, &z);
    out.sas.push_back(response_sas(sw, y, intent.x));
    out.artifact_norm.push_back(norm2(z));
    out.corruption.push_back(magnitude);
  }
  return out;
}

std::vector<BonCandidateSet> bon_candidate_sets(const SyntheticWorld& sw, std::size_t n_sets, std::uint64_t seed,
                                                const BonDesign& design) {
  std::vector<BonCandidateSet> sets;
  sets.reserve(n_sets);
  for (std::size_t t = 0; t < n_sets; ++t) {
    Rng rng = Rng::for_stream(seed, stream::kEval, t);
    const Intent intent = draw_intent(sw.world, sw.config, rng);
    BonCandidateSet set;
    set.prompt_id = numbered("prompt-", t);
    for (std::size_t j = 0; j < design.candidates; ++j) {
      const double scale =
          design.artifact_scale_lo + (design.artifact_scale_hi - design.artifact_scale_lo) * rng.uniform();
      const double corruption = design.corruption_max * rng.uniform();
      const Intent answered = corrupt_intent(sw.world, sw.config, intent.w, corruption, rng);
      GenConfig scaled = sw.config;
      scaled.sigma_z *= scale;
      const Vector g = apply_g(sw.world, draw_artifact(scaled, rng));
      Vector y = answered.clean_signal;
      for (std::size_t k = 0; k < y.size(); ++k) y[k] += g[k];
      BonCandidate c;
      c.response_id = numbered("r", j);
      c.artifact_magnitude = norm2(g);
      c.reward = -corruption + design.reward_artifact_coupling * *c.artifact_magnitude +
                 design.reward_noise * rng.gaussian();
      c.sas = response_sas(sw, y, intent.x);
      set.candidates.push_back(std::move(c));
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

BonComparison compare_best_of_n(std::span<const BonCandidateSet> sets, double sas_weight) {
  if (sets.empty()) throw DegenerateInputError("compare_best_of_n: no candidate sets");
  BonComparison cmp;
  for (const auto& set : sets) {
    const auto& v = set.candidates[best_of_n_index(set, 0.0)];
    const auto& w = set.candidates[best_of_n_index(set, sas_weight)];
    if (!v.artifact_magnitude || !w.artifact_magnitude)
      throw DegenerateInputError("compare_best_of_n: candidate without artifact magnitude in '" + set.prompt_id + "'");
    cmp.vanilla_artifact_mean += *v.artifact_magnitude;
    cmp.weighted_artifact_mean += *w.artifact_magnitude;
    cmp.vanilla_sas_mean += v.sas;
    cmp.weighted_sas_mean += w.sas;
  }
  const double n = static_cast<double>(sets.size());
  cmp.vanilla_artifact_mean /= n;
  cmp.weighted_artifact_mean /= n;
  cmp.vanilla_sas_mean /= n;
  cmp.weighted_sas_mean /= n;
  return cmp;
}

}  // namespace carp
