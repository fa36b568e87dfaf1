#pragma once

// JSON configuration: strict parsing (unknown keys are errors), canonical
// serialization and a stable content hash.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "carp/causalgen.hpp"
#include "carp/reward.hpp"
#include "carp/theory.hpp"

namespace carp {

/// Preference and Best-of-N data drawn on top of a generated world.
struct TaskConfig {
  std::size_t pref_pairs = 2000;
  std::size_t bon_sets = 500;
  std::size_t bon_candidates = 8;
  double artifact_scale_lo = 0.5;
  double artifact_scale_hi = 2.5;
  double corruption_max = 1.0;
  /// Annotator utility: −corruption + coupling·‖g(z)‖ + noise·ε.
  double label_artifact_coupling = 1.0;
  double label_noise = 0.5;
  /// Observed quality feature: −corruption + noise·ε.
  double quality_noise = 0.5;

  void validate() const;
};

struct RunConfig {
  GenConfig gen = GenConfig::reference();
  TaskConfig task;
  TrainConfig train = default_train();
  VerifyConfig verify;

  static TrainConfig default_train();
  void validate() const;
};

/// Parses a config document. Missing keys keep their defaults; unknown keys,
/// wrong types and invalid values raise ConfigError naming the key path.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Fully resolved config with every field present, keys sorted.
nlohmann::json canonical_json(const RunConfig& c);

/// FNV-1a 64 of canonical_json(c).dump(), as 16 lowercase hex digits.
std::string config_hash(const RunConfig& c);
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace carp
