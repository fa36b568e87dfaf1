#include "carp/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "carp/errors.hpp"

namespace carp {

namespace {

using nlohmann::json;

// Reads fields of one JSON object and reports any key that was not consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected true or false");
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        if (!v.is_array()) throw ConfigError("expected an array of numbers");
        for (const auto& e : v)
          if (!e.is_number()) throw ConfigError("expected an array of numbers");
      }
      out = v.get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError("config: '" + path_ + "." + key + "': " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError("config: '" + path_ + "." + key + "': " + e.what());
    }
  }

  /// Number, or null for +infinity.
  void get_extended(const char* key, double& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (v.is_null()) {
      out = std::numeric_limits<double>::infinity();
    } else if (v.is_number()) {
      out = v.get<double>();
    } else {
      throw ConfigError("config: '" + path_ + "." + key + "': expected a number or null (infinity)");
    }
  }

  void nonlinearity(const char* key, Nonlinearity& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError("config: '" + path_ + "." + key + "': expected a string");
    try {
      out = nonlinearity_from_string(j_.at(key).get<std::string>());
    } catch (const Error& e) {
      throw ConfigError("config: '" + path_ + "." + key + "': " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + path_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_gen(const json& j, GenConfig& g) {
  Section s(j, "gen");
  s.get("d_x", g.d_x);
  s.get("d_w", g.d_w);
  s.get("d_z", g.d_z);
  s.get("d", g.d);
  s.get("sae_width", g.sae_width);
  s.get("topk", g.topk);
  s.get("n_prompts", g.n_prompts);
  s.get("n_responses", g.n_responses);
  s.get("sigma_z", g.sigma_z);
  s.get("margin_target", g.margin_target);
  s.get("min_relative_margin", g.min_relative_margin);
  s.nonlinearity("nonlinearity", g.nonlinearity);
  s.get("identity_f", g.identity_f);
  s.get("seed", g.seed);
  s.finish();
}

json write_gen(const GenConfig& g) {
  return {{"d_x", g.d_x},
          {"d_w", g.d_w},
          {"d_z", g.d_z},
          {"d", g.d},
          {"sae_width", g.sae_width},
          {"topk", g.topk},
          {"n_prompts", g.n_prompts},
          {"n_responses", g.n_responses},
          {"sigma_z", g.sigma_z},
          {"margin_target", g.margin_target},
          {"min_relative_margin", g.min_relative_margin},
          {"nonlinearity", to_string(g.nonlinearity)},
          {"identity_f", g.identity_f},
          {"seed", g.seed}};
}

void read_task(const json& j, TaskConfig& t) {
  Section s(j, "task");
  s.get("pref_pairs", t.pref_pairs);
  s.get("bon_sets", t.bon_sets);
  s.get("bon_candidates", t.bon_candidates);
  s.get("artifact_scale_lo", t.artifact_scale_lo);
  s.get("artifact_scale_hi", t.artifact_scale_hi);
  s.get("corruption_max", t.corruption_max);
  s.get("label_artifact_coupling", t.label_artifact_coupling);
  s.get("label_noise", t.label_noise);
  s.get("quality_noise", t.quality_noise);
  s.finish();
}

json write_task(const TaskConfig& t) {
  return {{"pref_pairs", t.pref_pairs},
          {"bon_sets", t.bon_sets},
          {"bon_candidates", t.bon_candidates},
          {"artifact_scale_lo", t.artifact_scale_lo},
          {"artifact_scale_hi", t.artifact_scale_hi},
          {"corruption_max", t.corruption_max},
          {"label_artifact_coupling", t.label_artifact_coupling},
          {"label_noise", t.label_noise},
          {"quality_noise", t.quality_noise}};
}

void read_train(const json& j, TrainConfig& t) {
  Section s(j, "train");
  s.get("sas_weight", t.sas_weight);
  s.get_extended("safety_threshold", t.safety_threshold);
  s.get("epochs", t.epochs);
  s.get("lr", t.lr);
  s.get("batch", t.batch);
  s.get("curriculum", t.curriculum);
  s.get("seed", t.seed);
  s.get("grad_tol", t.grad_tol);
  s.finish();
}

json write_train(const TrainConfig& t) {
  return {{"sas_weight", t.sas_weight},
          {"safety_threshold", std::isinf(t.safety_threshold) ? json(nullptr) : json(t.safety_threshold)},
          {"epochs", t.epochs},
          {"lr", t.lr},
          {"batch", t.batch},
          {"curriculum", t.curriculum},
          {"seed", t.seed},
          {"grad_tol", t.grad_tol}};
}

void read_verify(const json& j, VerifyConfig& v) {
  Section s(j, "verify");
  if (const json* fw = s.child("flip_world")) read_gen(*fw, v.flip_world);
  if (const json* ew = s.child("eval_world")) read_gen(*ew, v.eval_world);
  s.get("seed", v.seed);
  s.get("perturbations", v.perturbations);
  s.get("ratios", v.ratios);
  s.get("sigmas", v.sigmas);
  s.get("grid_trials", v.grid_trials);
  s.get("ci_multiplier", v.ci_multiplier);
  s.get("concentration_sigma", v.concentration_sigma);
  s.get("concentration_pflip_max", v.concentration_pflip_max);
  s.get("concentration_small", v.concentration_small);
  s.get("concentration_large", v.concentration_large);
  s.get("concentration_seeds", v.concentration_seeds);
  s.get("oracle_samples", v.oracle_samples);
  s.get("concentration_ratio", v.concentration_ratio);
  s.get("independence_samples", v.independence_samples);
  s.get("corruption_max", v.corruption_max);
  s.get("artifact_r_max", v.artifact_r_max);
  s.get("corruption_r_min", v.corruption_r_min);
  s.finish();
}

json write_verify(const VerifyConfig& v) {
  return {{"flip_world", write_gen(v.flip_world)},
          {"eval_world", write_gen(v.eval_world)},
          {"seed", v.seed},
          {"perturbations", v.perturbations},
          {"ratios", v.ratios},
          {"sigmas", v.sigmas},
          {"grid_trials", v.grid_trials},
          {"ci_multiplier", v.ci_multiplier},
          {"concentration_sigma", v.concentration_sigma},
          {"concentration_pflip_max", v.concentration_pflip_max},
          {"concentration_small", v.concentration_small},
          {"concentration_large", v.concentration_large},
          {"concentration_seeds", v.concentration_seeds},
          {"oracle_samples", v.oracle_samples},
          {"concentration_ratio", v.concentration_ratio},
          {"independence_samples", v.independence_samples},
          {"corruption_max", v.corruption_max},
          {"artifact_r_max", v.artifact_r_max},
          {"corruption_r_min", v.corruption_r_min}};
}

}  // namespace

void TaskConfig::validate() const {
  if (bon_sets > 0 && bon_candidates < 1) throw ConfigError("task.bon_candidates must be >= 1");
  if (!(artifact_scale_lo >= 0.0) || !(artifact_scale_hi >= artifact_scale_lo) || !std::isfinite(artifact_scale_hi))
    throw ConfigError("task: need 0 <= artifact_scale_lo <= artifact_scale_hi < inf");
  if (!(corruption_max >= 0.0) || !std::isfinite(corruption_max))
    throw ConfigError("task.corruption_max must be finite and >= 0");
  if (!std::isfinite(label_artifact_coupling)) throw ConfigError("task.label_artifact_coupling must be finite");
  if (!(label_noise >= 0.0) || !std::isfinite(label_noise)) throw ConfigError("task.label_noise must be finite and >= 0");
  if (!(quality_noise >= 0.0) || !std::isfinite(quality_noise))
    throw ConfigError("task.quality_noise must be finite and >= 0");
}

TrainConfig RunConfig::default_train() {
  TrainConfig t;
  t.sas_weight = 1.0;
  t.epochs = 500;
  t.lr = 0.5;
  t.seed = 20240611;
  return t;
}

void RunConfig::validate() const {
  gen.validate();
  task.validate();
  train.validate();
  verify.validate();
}

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  Section s(j, "$");
  if (const json* g = s.child("gen")) read_gen(*g, c.gen);
  if (const json* t = s.child("task")) read_task(*t, c.task);
  if (const json* t = s.child("train")) read_train(*t, c.train);
  if (const json* v = s.child("verify")) read_verify(*v, c.verify);
  s.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json canonical_json(const RunConfig& c) {
  return {{"gen", write_gen(c.gen)},
          {"task", write_task(c.task)},
          {"train", write_train(c.train)},
          {"verify", write_verify(c.verify)}};
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json(c).dump())));
  return buf;
}

}  // namespace carp
