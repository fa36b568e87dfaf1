#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "carp/config.hpp"

using namespace carp;
using nlohmann::json;

namespace {

// Independent FNV-1a 64 over the canonical dump.
std::string rehash(const json& canonical) {
  unsigned long long h = 14695981039346656037ULL;
  for (char ch : canonical.dump()) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", h);
  return buf;
}

}  // namespace

TEST_CASE("defaults parse from an empty document") {
  const RunConfig c = parse_run_config(json::object());
  CHECK(c.gen.d == GenConfig::reference().d);
  CHECK(std::isinf(c.train.safety_threshold));
  CHECK(config_hash(c) == rehash(canonical_json(c)));
}

TEST_CASE("overrides and canonical round trip") {
  const json j = json::parse(R"({
    "gen": {"d": 3, "d_w": 2, "d_x": 2, "d_z": 2, "sae_width": 4, "topk": 2, "n_prompts": 2, "n_responses": 1,
            "nonlinearity": "tanh", "sigma_z": 0.5},
    "train": {"sas_weight": 0.25, "safety_threshold": 1.5, "curriculum": true},
    "task": {"pref_pairs": 0, "bon_sets": 0},
    "verify": {"ratios": [8], "sigmas": [0.5, 1], "flip_world": {"sigma_z": 2.0}}
  })");
  const RunConfig c = parse_run_config(j);
  CHECK(c.gen.d == 3);
  CHECK(c.gen.nonlinearity == Nonlinearity::kTanh);
  CHECK(c.train.safety_threshold == 1.5);
  CHECK(c.train.curriculum);
  CHECK(c.verify.sigmas.size() == 2);
  CHECK(c.verify.flip_world.sigma_z == 2.0);
  const RunConfig again = parse_run_config(canonical_json(c));
  CHECK(canonical_json(again) == canonical_json(c));
  CHECK(config_hash(again) == config_hash(c));
  CHECK(config_hash(c) != config_hash(parse_run_config(json::object())));
}

TEST_CASE("infinite threshold is written as null") {
  RunConfig c;
  CHECK(canonical_json(c)["train"]["safety_threshold"].is_null());
  const RunConfig back = parse_run_config(canonical_json(c));
  CHECK(std::isinf(back.train.safety_threshold));
}

TEST_CASE("unknown keys, wrong types and invalid values are rejected") {
  auto rejects = [](const char* text, const char* needle) {
    try {
      parse_run_config(json::parse(text));
      return false;
    } catch (const ConfigError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
  };
  CHECK(rejects(R"({"gen": {"dx": 3}})", "gen.dx"));
  CHECK(rejects(R"({"extra": 1})", "$.extra"));
  CHECK(rejects(R"({"verify": {"flip_world": {"bogus": 1}}})", "bogus"));
  CHECK(rejects(R"({"gen": {"d": -3}})", "gen.d"));
  CHECK(rejects(R"({"gen": {"d": 3.5}})", "gen.d"));
  CHECK(rejects(R"({"gen": {"d": "3"}})", "gen.d"));
  CHECK(rejects(R"({"train": {"curriculum": 1}})", "curriculum"));
  CHECK(rejects(R"({"gen": {"nonlinearity": "relu"}})", "nonlinearity"));
  CHECK(rejects(R"({"gen": {"topk": 99}})", "topk"));
  CHECK(rejects(R"({"train": {"lr": 0}})", "lr"));
  CHECK(rejects(R"({"gen": []})", "gen"));
  CHECK(rejects(R"({"verify": {"ratios": ["x"]}})", "ratios"));
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}
