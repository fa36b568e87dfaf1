#include "carp/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "carp/decoder.hpp"
#include "carp/encoder.hpp"
#include "carp/errors.hpp"
#include "carp/protocols.hpp"

namespace carp {

namespace {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

}  // namespace

void VerifyConfig::validate() const {
  flip_world.validate();
  eval_world.validate();
  if (flip_world.margin_target <= 0.0) throw ConfigError("flip_world.margin_target must be > 0");
  if (perturbations < 1) throw ConfigError("perturbations must be >= 1");
  if (ratios.empty() || sigmas.empty()) throw ConfigError("ratios and sigmas must be non-empty");
  for (double r : ratios)
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("ratios must be finite and > 0");
  for (double s : sigmas)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sigmas must be finite and >= 0");
  if (grid_trials < 100) throw ConfigError("grid_trials must be >= 100");
  if (!(ci_multiplier >= 0.0)) throw ConfigError("ci_multiplier must be >= 0");
  if (concentration_small < 2 || concentration_large <= concentration_small)
    throw ConfigError("need 2 <= concentration_small < concentration_large");
  if (concentration_seeds < 1) throw ConfigError("concentration_seeds must be >= 1");
  if (oracle_samples < 10000) throw ConfigError("oracle_samples must be >= 10000");
  if (independence_samples < 3) throw ConfigError("independence_samples must be >= 3");
  if (!(corruption_max > 0.0)) throw ConfigError("corruption_max must be > 0");
}

PropertyResult check_deterministic_no_flip(const VerifyConfig& vc) {
  Stopwatch sw;
  const GenConfig& cfg = vc.flip_world;
  const WorldMaps world = build_world(cfg);
  const double delta = cfg.margin_target;
  std::size_t flips = 0;
  double max_ratio = 0.0;  // max ‖Pη‖∞ / (δ/2)
  for (std::size_t t = 0; t < vc.perturbations; ++t) {
    Rng rng = Rng::for_stream(vc.seed, stream::kPerturbation, t);
    const Intent intent = draw_intent(world, cfg, rng);
    Vector v = gaussian_vector(rng, cfg.d);
    const double pv = norm_inf(matvec(world.proj, v));
    if (pv == 0.0) continue;
    // Half the draws sit just inside the boundary.
    const double rho = (t % 2 == 0) ? 0.9 + 0.099 * rng.uniform() : 0.999 * rng.uniform();
    const double scale = rho * (0.5 * delta) / pv;
    Vector y = intent.clean_signal;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * v[i];
    for (double& e : v) e *= scale;
    max_ratio = std::max(max_ratio, norm_inf(matvec(world.proj, v)) / (0.5 * delta));
    if (detect_flip(world.proj, intent.clean_signal, y, cfg.topk).flipped) ++flips;
  }
  PropertyResult r;
  r.name = "deterministic_no_flip";
  r.values = {{"perturbations", static_cast<double>(vc.perturbations)},
              {"flips", static_cast<double>(flips)},
              {"delta", delta},
              {"max_perturbation_over_half_margin", max_ratio}};
  r.passed = flips == 0 && max_ratio < 1.0;
  r.detail = std::to_string(flips) + " flips over " + std::to_string(vc.perturbations) + " perturbations";
  r.seconds = sw.seconds();
  return r;
}

GridPoint bound_grid_point(const GenConfig& base, double delta, double sigma, std::size_t trials,
                           double ci_multiplier) {
  GenConfig cfg = base;
  cfg.margin_target = delta;
  cfg.sigma_z = sigma;
  const WorldMaps world = build_world(cfg);
  GridPoint g;
  g.sigma = sigma;
  g.delta = delta;
  g.ratio = sigma > 0.0 ? delta / sigma : std::numeric_limits<double>::infinity();
  g.sigma_eff = artifact_subgaussian_scale(world, cfg);
  const FlipEstimate est = estimate_pflip(world, cfg, trials);
  g.p_hat = est.p_hat;
  g.ci_halfwidth = est.ci_halfwidth;
  g.bound = g.sigma_eff > 0.0 ? pflip_bound(cfg.sae_width, delta, g.sigma_eff) : 0.0;
  g.passed = g.p_hat - ci_multiplier * g.ci_halfwidth <= g.bound;
  return g;
}

PropertyResult check_bound_dominance(const VerifyConfig& vc, std::vector<GridPoint>* grid) {
  Stopwatch sw;
  std::vector<GridPoint> points;
  for (double ratio : vc.ratios)
    for (double sigma : vc.sigmas)
      points.push_back(bound_grid_point(vc.flip_world, ratio * sigma, sigma, vc.grid_trials, vc.ci_multiplier));
  std::size_t failed = 0;
  double worst_slack = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    if (!p.passed) ++failed;
    worst_slack = std::min(worst_slack, p.bound - (p.p_hat - vc.ci_multiplier * p.ci_halfwidth));
  }
  PropertyResult r;
  r.name = "flip_bound_dominance";
  r.values = {{"grid_points", static_cast<double>(points.size())},
              {"failed_points", static_cast<double>(failed)},
              {"min_slack", worst_slack}};
  r.passed = failed == 0;
  r.detail = std::to_string(points.size() - failed) + "/" + std::to_string(points.size()) + " grid points dominated";
  r.seconds = sw.seconds();
  if (grid) *grid = std::move(points);
  return r;
}

PropertyResult check_concentration(const VerifyConfig& vc, std::vector<ConcentrationRow>* rows) {
  Stopwatch sw;
  GenConfig cfg = vc.flip_world;
  cfg.sigma_z = vc.concentration_sigma;
  const WorldMaps world = build_world(cfg);
  PropertyResult r;
  r.name = "decoder_concentration";

  GenConfig probe = cfg;
  probe.seed = vc.seed;
  const FlipEstimate flip = estimate_pflip(world, probe, vc.grid_trials);
  r.values["p_flip_hat"] = flip.p_hat;

  const DecoderParams ideal = ideal_params_oracle(world, cfg, vc.oracle_samples);
  std::vector<ConcentrationRow> all;
  std::map<std::size_t, std::vector<double>> by_nm;
  for (std::size_t nm : {vc.concentration_small, vc.concentration_large}) {
    for (std::size_t s = 0; s < vc.concentration_seeds; ++s) {
      GenConfig sample_cfg = cfg;
      sample_cfg.seed = vc.seed + 1000 + s;
      sample_cfg.n_prompts = std::max<std::size_t>(1, nm / cfg.n_responses);
      const auto data = encode_dataset(world, sample_cfg, sample_dataset(world, sample_cfg));
      const DecoderParams fitted = fit_closed_form(data.codes, data.targets);
      const ConcentrationDistance dist = concentration_report(fitted, ideal);
      all.push_back({nm, sample_cfg.seed, dist.weight_op, dist.bias_l2});
      by_nm[nm].push_back(dist.weight_op);
    }
  }
  const double small = median(by_nm[vc.concentration_small]);
  const double large = median(by_nm[vc.concentration_large]);
  r.values["median_op_small"] = small;
  r.values["median_op_large"] = large;
  r.values["ratio"] = large / small;
  const bool world_ok = flip.p_hat < vc.concentration_pflip_max;
  r.passed = world_ok && large < vc.concentration_ratio * small;
  r.detail = "median op distance " + fmt(small) + " -> " + fmt(large);
  if (!world_ok) r.detail += "; world p_flip " + fmt(flip.p_hat) + " is not below " + fmt(vc.concentration_pflip_max);
  r.seconds = sw.seconds();
  if (rows) *rows = std::move(all);
  return r;
}

PropertyResult check_artifact_independence(const VerifyConfig& vc) {
  Stopwatch sw;
  const SyntheticWorld world = fit_synthetic_decoder(vc.eval_world);
  const IndependenceSample s = artifact_independence_sample(world, vc.independence_samples, vc.seed, vc.corruption_max);
  const PearsonResult rz = pearson(s.sas, s.artifact_norm);
  const PearsonResult rc = pearson(s.sas, s.corruption);
  PropertyResult r;
  r.name = "artifact_independence";
  r.values = {{"r_artifact", rz.r}, {"p_artifact", rz.p}, {"r_corruption", rc.r}, {"p_corruption", rc.p},
              {"samples", static_cast<double>(s.sas.size())}};
  r.passed = std::abs(rz.r) < vc.artifact_r_max && rc.r > vc.corruption_r_min;
  r.detail = "r(sas, |z|) = " + fmt(rz.r) + ", r(sas, corruption) = " + fmt(rc.r);
  r.seconds = sw.seconds();
  return r;
}

bool TheoryReport::all_passed() const {
  return std::all_of(properties.begin(), properties.end(), [](const PropertyResult& p) { return p.passed; });
}

std::string TheoryReport::to_json() const {
  using nlohmann::ordered_json;
  ordered_json j;
  j["all_passed"] = all_passed();
  j["properties"] = ordered_json::array();
  for (const auto& p : properties) {
    ordered_json e;
    e["name"] = p.name;
    e["passed"] = p.passed;
    e["detail"] = p.detail;
    e["seconds"] = p.seconds;
    e["values"] = ordered_json::object();
    for (const auto& [k, v] : p.values) e["values"][k] = std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
    j["properties"].push_back(e);
  }
  j["grid"] = ordered_json::array();
  for (const auto& g : grid)
    j["grid"].push_back({{"ratio", std::isfinite(g.ratio) ? ordered_json(g.ratio) : ordered_json(nullptr)},
                         {"sigma", g.sigma},
                         {"delta", g.delta},
                         {"sigma_eff", g.sigma_eff},
                         {"p_hat", g.p_hat},
                         {"ci_halfwidth", g.ci_halfwidth},
                         {"bound", g.bound},
                         {"passed", g.passed}});
  j["concentration"] = ordered_json::array();
  for (const auto& c : concentration)
    j["concentration"].push_back({{"nm", c.nm}, {"seed", c.seed}, {"weight_op", c.weight_op}, {"bias_l2", c.bias_l2}});
  return j.dump(2) + "\n";
}

std::string TheoryReport::grid_csv() const {
  std::ostringstream out;
  out << std::setprecision(17) << "ratio,sigma,delta,sigma_eff,p_hat,ci_halfwidth,bound,passed\n";
  for (const auto& g : grid)
    out << g.ratio << ',' << g.sigma << ',' << g.delta << ',' << g.sigma_eff << ',' << g.p_hat << ','
        << g.ci_halfwidth << ',' << g.bound << ',' << (g.passed ? 1 : 0) << '\n';
  return out.str();
}

std::string TheoryReport::properties_csv() const {
  std::ostringstream out;
  out << "name,passed,seconds,detail\n";
  for (const auto& p : properties) out << p.name << ',' << (p.passed ? 1 : 0) << ',' << p.seconds << ",\"" << p.detail << "\"\n";
  return out.str();
}

TheoryReport verify_theory(const VerifyConfig& vc) {
  vc.validate();
  TheoryReport rep;
  rep.properties.push_back(check_deterministic_no_flip(vc));
  rep.properties.push_back(check_bound_dominance(vc, &rep.grid));
  rep.properties.push_back(check_concentration(vc, &rep.concentration));
  rep.properties.push_back(check_artifact_independence(vc));
  return rep;
}

}  // namespace carp
