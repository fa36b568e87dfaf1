#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "carp/config.hpp"
#include "carp/fileio.hpp"

using namespace carp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "carp_test_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d.parent_path());
  return d;
}

int run(const std::string& args) {
  const std::string cmd = std::string(CARP_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& where, const std::string& text) {
  fs::create_directories(where.parent_path());
  write_file(where, text);
  return where;
}

const char* kSmall = R"({
  "gen": {"d_x": 4, "d_w": 3, "d_z": 4, "d": 8, "sae_width": 16, "topk": 3, "n_prompts": 60, "n_responses": 2,
          "seed": 5},
  "task": {"pref_pairs": 120, "bon_sets": 30, "bon_candidates": 4},
  "train": {"epochs": 60}
})";

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("synth-gen") == 2);  // --out is required
  CHECK(run("--help") == 0);
}

TEST_CASE("synth-gen is byte-deterministic and its manifest hash re-derives") {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const fs::path cfg = write_config(scratch("gen_cfg") / "c.json", kSmall);
  REQUIRE(run("synth-gen --config " + cfg.string() + " --out " + a.string()) == 0);
  REQUIRE(run("synth-gen --config " + cfg.string() + " --out " + b.string()) == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK(read_file(e.path()) == read_file(b / e.path().filename()));
    ++files;
  }
  CHECK(files >= 10);

  const Json manifest = Json::parse(read_file(a / "manifest.json"));
  const RunConfig parsed = parse_run_config(manifest["config"]);
  CHECK(manifest["config_hash"] == config_hash(parsed));
  CHECK(manifest["config_hash"] == config_hash(load_run_config(cfg)));
  for (const auto& [name, shape] : manifest["files"].items()) {
    const EmbeddingFile f = read_embedding(a / name);
    CHECK(f.rows == shape["rows"].get<std::size_t>());
    CHECK(f.cols == shape["cols"].get<std::size_t>());
  }

  // A different seed changes the data.
  const fs::path c = scratch("gen_c");
  REQUIRE(run("synth-gen --config " + cfg.string() + " --seed 6 --out " + c.string()) == 0);
  CHECK(read_file(a / "train_y.carpemb") != read_file(c / "train_y.carpemb"));
}

TEST_CASE("tiny world shapes") {
  const fs::path cfg = write_config(scratch("tiny_cfg") / "c.json", R"({
    "gen": {"d_x": 2, "d_w": 2, "d_z": 2, "d": 3, "sae_width": 4, "topk": 2, "n_prompts": 2, "n_responses": 1},
    "task": {"pref_pairs": 0, "bon_sets": 0}
  })");
  const fs::path out = scratch("tiny");
  REQUIRE(run("synth-gen --config " + cfg.string() + " --out " + out.string()) == 0);
  const EmbeddingFile x = read_embedding(out / "train_x.carpemb");
  const EmbeddingFile y = read_embedding(out / "train_y.carpemb");
  const EmbeddingFile z = read_embedding(out / "train_z.carpemb");
  CHECK((x.rows == 2 && x.cols == 2));
  CHECK((y.rows == 2 && y.cols == 3));
  CHECK((z.rows == 2 && z.cols == 2));
  CHECK(read_embedding(out / "world_proj.carpemb").rows == 4);
}

TEST_CASE("malformed config exits 2 and writes nothing") {
  const fs::path cfg = write_config(scratch("bad_cfg") / "c.json", R"({"gen": {"bogus": 1}})");
  const fs::path out = scratch("bad_out");
  CHECK(run("synth-gen --config " + cfg.string() + " --out " + out.string()) == 2);
  CHECK_FALSE(fs::exists(out));
  CHECK(run("pipeline --config " + cfg.string() + " --out " + out.string()) == 2);
  CHECK_FALSE(fs::exists(out));
  const fs::path broken = write_config(scratch("broken_cfg") / "c.json", "{not json");
  CHECK(run("pipeline --config " + broken.string() + " --out " + out.string()) == 2);
  CHECK_FALSE(fs::exists(out));
  CHECK(run("synth-gen --config /nonexistent.json --out " + out.string()) == 2);
}

TEST_CASE("stage commands chain and reject truncated inputs") {
  const fs::path cfg = write_config(scratch("chain_cfg") / "c.json", kSmall);
  const fs::path d = scratch("chain");
  REQUIRE(run("synth-gen --config " + cfg.string() + " --out " + d.string()) == 0);
  const std::string p = d.string() + "/";
  REQUIRE(run("encode --proj " + p + "world_proj.carpemb --input " + p + "train_y.carpemb --topk 3 --out " + p +
              "codes.carpemb") == 0);
  REQUIRE(run("fit-decoder --codes " + p + "codes.carpemb --prompts " + p + "train_x.carpemb --out " + p +
              "dec.carpdec") == 0);
  REQUIRE(run("score-sas --decoder " + p + "dec.carpdec --codes " + p + "codes.carpemb --prompts " + p +
              "train_x.carpemb --out " + p + "sas.jsonl") == 0);
  const auto recs = parse_jsonl(read_file(d / "sas.jsonl"));
  CHECK(recs.size() == 120);
  for (const auto& r : recs) CHECK(r["sas"].get<double>() >= 0.0);
  REQUIRE(run("plot-export --input " + p + "sas.jsonl --field sas --bins 5 --out " + p + "sas.dat") == 0);
  CHECK(read_file(d / "sas.dat").find("# lo hi count") == 0);
  CHECK(run("plot-export --input " + p + "sas.jsonl --field missing --out " + p + "x.dat") == 2);

  const std::string full = read_file(d / "codes.carpemb");
  write_file(d / "cut.carpemb", full.substr(0, full.size() / 2));
  CHECK(run("fit-decoder --codes " + p + "cut.carpemb --prompts " + p + "train_x.carpemb --out " + p +
            "dec2.carpdec") == 2);
  CHECK_FALSE(fs::exists(d / "dec2.carpdec"));
  // Topk wider than the code width.
  CHECK(run("encode --proj " + p + "world_proj.carpemb --input " + p + "train_y.carpemb --topk 99 --out " + p +
            "bad.carpemb") != 0);
}

TEST_CASE("pipeline resume and zero SAS weight") {
  const fs::path cfg = write_config(scratch("pl_cfg") / "c.json", kSmall);
  const fs::path full = scratch("pl_full"), split = scratch("pl_split");
  REQUIRE(run("pipeline --config " + cfg.string() + " --out " + full.string()) == 0);
  REQUIRE(run("pipeline --config " + cfg.string() + " --out " + split.string() + " --stop-after encode") == 0);
  CHECK_FALSE(fs::exists(split / "report.json"));
  REQUIRE(run("pipeline --config " + cfg.string() + " --out " + split.string() + " --resume") == 0);
  CHECK(read_file(full / "report.json") == read_file(split / "report.json"));
  CHECK(read_file(full / "rm_carp.carprm") == read_file(split / "rm_carp.carprm"));

  const fs::path k0cfg = write_config(scratch("pl_k0_cfg") / "c.json", R"({
    "gen": {"d_x": 4, "d_w": 3, "d_z": 4, "d": 8, "sae_width": 16, "topk": 3, "n_prompts": 60, "n_responses": 2},
    "task": {"pref_pairs": 120, "bon_sets": 30, "bon_candidates": 4},
    "train": {"epochs": 60, "sas_weight": 0}
  })");
  const fs::path k0 = scratch("pl_k0");
  REQUIRE(run("pipeline --config " + k0cfg.string() + " --out " + k0.string()) == 0);
  const Json rep = Json::parse(read_file(k0 / "report.json"));
  CHECK(rep["vanilla"] == rep["carp"]);
  CHECK(read_file(k0 / "rm_vanilla.carprm") == read_file(k0 / "rm_carp.carprm"));
}

TEST_CASE("verify-theory reports a zero flip rate when the artifact has no variance") {
  const fs::path cfg = write_config(scratch("vt_cfg") / "c.json", R"({
    "verify": {"perturbations": 200, "ratios": [2], "sigmas": [0], "grid_trials": 200,
               "concentration_small": 200, "concentration_large": 2000, "concentration_seeds": 1,
               "oracle_samples": 10000, "independence_samples": 200}
  })");
  const fs::path out = scratch("vt");
  const int code = run("verify-theory --config " + cfg.string() + " --out " + out.string());
  CHECK((code == 0 || code == 1));
  const Json rep = Json::parse(read_file(out / "theory_report.json"));
  REQUIRE(rep["grid"].size() == 1);
  CHECK(rep["grid"][0]["p_hat"].get<double>() == 0.0);
  CHECK(rep["grid"][0]["passed"].get<bool>());
  CHECK(fs::exists(out / "theory_grid.csv"));
  CHECK(fs::exists(out / "theory_properties.csv"));
}
