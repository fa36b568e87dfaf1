// carp: command-line front end for the synthetic CARP pipeline.
//
// Exit codes: 0 success, 1 property failure or runtime failure, 2 usage or
// configuration error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "carp/config.hpp"
#include "carp/decoder.hpp"
#include "carp/encoder.hpp"
#include "carp/evalharness.hpp"
#include "carp/fileio.hpp"
#include "carp/pipeline.hpp"
#include "carp/reward.hpp"
#include "carp/theory.hpp"

namespace fs = std::filesystem;
using namespace carp;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed override");
  cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

RunConfig resolve(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) {
    rc.gen.seed = *c.seed;
    rc.train.seed = *c.seed;
    rc.verify.seed = *c.seed;
  }
  rc.validate();
  return rc;
}

void require_dir_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir.string() + "'");
  const fs::path probe = dir / ".carp-write-probe";
  try {
    write_file(probe, "");
  } catch (const Error&) {
    throw ConfigError("output directory '" + dir.string() + "' is not writable");
  }
  fs::remove(probe);
}

void require_parent_writable(const fs::path& file) {
  const fs::path parent = file.has_parent_path() ? file.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw ConfigError("output directory '" + parent.string() + "' does not exist");
}

std::string fixed(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

Json accuracy_json(const AccuracyReport& r) {
  Json j;
  j["accuracy"] = r.accuracy;
  j["correct"] = r.correct;
  j["total"] = r.total;
  j["per_domain"] = Json::object();
  for (const auto& [dom, a] : r.per_domain)
    j["per_domain"][dom] = {{"accuracy", a.accuracy()}, {"correct", a.correct}, {"total", a.total}};
  return j;
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty())
    std::cout << text;
  else
    write_file(out, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"carp: sparse-code prompt decoding, SAS scoring and SAS-regularized reward training"};
  app.require_subcommand(1);

  // synth-gen
  Common gen_c;
  std::string gen_out;
  auto* gen = app.add_subcommand("synth-gen", "generate a synthetic world and datasets");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "output directory")->required();

  // encode
  std::string enc_proj, enc_in, enc_out;
  std::size_t enc_k = 0;
  auto* enc = app.add_subcommand("encode", "TopK-encode response embeddings");
  enc->add_option("--proj", enc_proj, "projection matrix (CARPEMB1)")->required()->check(CLI::ExistingFile);
  enc->add_option("--input", enc_in, "response embeddings (CARPEMB1)")->required()->check(CLI::ExistingFile);
  enc->add_option("--topk", enc_k, "number of kept coordinates")->required();
  enc->add_option("--out", enc_out, "output codes (CARPEMB1)")->required();

  // fit-decoder
  std::string fd_codes, fd_prompts, fd_out, fd_method = "closed_form";
  std::optional<double> fd_ridge;
  SgdOptions fd_sgd;
  auto* fd = app.add_subcommand("fit-decoder", "fit the prompt decoder on codes and prompt embeddings");
  fd->add_option("--codes", fd_codes, "codes (CARPEMB1 with prompt_index metadata)")->required()->check(CLI::ExistingFile);
  fd->add_option("--prompts", fd_prompts, "prompt embeddings (CARPEMB1)")->required()->check(CLI::ExistingFile);
  fd->add_option("--out", fd_out, "output decoder (CARPDEC1)")->required();
  fd->add_option("--method", fd_method, "closed_form | sgd_mse | sgd_cosine")
      ->check(CLI::IsMember({"closed_form", "sgd_mse", "sgd_cosine"}));
  fd->add_option("--ridge", fd_ridge, "ridge (closed form; default scales with the code trace)");
  fd->add_option("--lr", fd_sgd.lr, "SGD learning rate");
  fd->add_option("--epochs", fd_sgd.epochs, "SGD epochs");
  fd->add_option("--batch", fd_sgd.batch, "SGD batch size");
  fd->add_option("--seed", fd_sgd.seed, "SGD shuffle seed");

  // score-sas
  std::string ss_dec, ss_codes, ss_prompts, ss_out;
  auto* ss = app.add_subcommand("score-sas", "score responses with the decoder");
  ss->add_option("--decoder", ss_dec, "decoder (CARPDEC1)")->required()->check(CLI::ExistingFile);
  ss->add_option("--codes", ss_codes, "codes (CARPEMB1)")->required()->check(CLI::ExistingFile);
  ss->add_option("--prompts", ss_prompts, "prompt embeddings (CARPEMB1)")->required()->check(CLI::ExistingFile);
  ss->add_option("--out", ss_out, "output JSONL (row, response_id, sas)")->required();

  // train-rm
  Common tr_c;
  std::string tr_pairs, tr_out, tr_report, tr_mode = "linear";
  std::optional<double> tr_k, tr_tau, tr_lr;
  std::optional<std::size_t> tr_epochs, tr_batch;
  bool tr_curriculum = false;
  auto* tr = app.add_subcommand("train-rm", "train a Bradley-Terry reward model with optional SAS offset");
  add_common(tr, tr_c);
  tr->add_option("--pairs", tr_pairs, "preference pairs (JSONL)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "output reward model (CARPRM1)")->required();
  tr->add_option("--report", tr_report, "training report (JSON)");
  tr->add_option("--mode", tr_mode, "linear | tabular")->check(CLI::IsMember({"linear", "tabular"}));
  tr->add_option("--sas-weight", tr_k, "SAS weight k");
  tr->add_option("--tau", tr_tau, "safety threshold");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--epochs", tr_epochs, "epochs");
  tr->add_option("--batch", tr_batch, "batch size (0 = full batch)");
  tr->add_flag("--curriculum", tr_curriculum, "disable the SAS term in epoch 0");

  // eval-pairs
  std::string ep_pairs, ep_out, ep_rule = "lower_wins";
  auto* ep = app.add_subcommand("eval-pairs", "pairwise selection accuracy");
  ep->add_option("--pairs", ep_pairs, "JSONL with pair_id, score_a, score_b, label, domain_tag")
      ->required()
      ->check(CLI::ExistingFile);
  ep->add_option("--rule", ep_rule, "lower_wins | higher_wins")->check(CLI::IsMember({"lower_wins", "higher_wins"}));
  ep->add_option("--out", ep_out, "report (JSON); stdout if omitted");

  // best-of-n
  std::string bn_sets, bn_out;
  double bn_w = 0.0;
  auto* bn = app.add_subcommand("best-of-n", "Best-of-N selection with an optional SAS penalty");
  bn->add_option("--sets", bn_sets, "candidate sets (JSONL)")->required()->check(CLI::ExistingFile);
  bn->add_option("--sas-weight", bn_w, "score = reward - w * sas")->check(CLI::NonNegativeNumber);
  bn->add_option("--out", bn_out, "report (JSON); stdout if omitted");

  // verify-theory
  Common vt_c;
  std::string vt_out;
  auto* vt = app.add_subcommand("verify-theory", "check flip, concentration and independence properties");
  add_common(vt, vt_c);
  vt->add_option("--out", vt_out, "output directory")->required();

  // pipeline
  Common pl_c;
  std::string pl_out, pl_stop;
  bool pl_resume = false;
  auto* pl = app.add_subcommand("pipeline", "generate, encode, fit, score, train and evaluate");
  add_common(pl, pl_c);
  pl->add_option("--out", pl_out, "run directory")->required();
  pl->add_flag("--resume", pl_resume, "skip stages already completed with the same config");
  pl->add_option("--stop-after", pl_stop, "stop after this stage");

  // plot-export
  std::string px_in, px_out, px_field, px_yfield;
  std::size_t px_bins = 20;
  auto* px = app.add_subcommand("plot-export", "histogram or scatter data for gnuplot from a JSONL file");
  px->add_option("--input", px_in, "JSONL records")->required()->check(CLI::ExistingFile);
  px->add_option("--field", px_field, "numeric field (x)")->required();
  px->add_option("--y-field", px_yfield, "second numeric field; emits a scatter instead of a histogram");
  px->add_option("--bins", px_bins, "histogram bins")->check(CLI::PositiveNumber);
  px->add_option("--out", px_out, "output .dat")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) {
      const RunConfig rc = resolve(gen_c);
      require_dir_writable(gen_out);
      stage_generate(rc, gen_out);
      std::cout << "wrote " << gen_out << " (config " << config_hash(rc) << ")\n";
      return kOk;
    }
    if (*enc) {
      require_parent_writable(enc_out);
      write_embedding(enc_out, encode_embedding_rows(read_embedding(enc_proj), read_embedding(enc_in), enc_k));
      return kOk;
    }
    if (*fd) {
      require_parent_writable(fd_out);
      const EmbeddingFile codes = read_embedding(fd_codes);
      const EmbeddingFile prompts = read_embedding(fd_prompts);
      const auto pidx = prompt_index(codes);
      std::vector<SparseCode> u;
      std::vector<Vector> x;
      const Matrix pm = prompts.to_matrix();
      for (std::size_t r = 0; r < codes.rows; ++r) {
        if (pidx[r] >= prompts.rows) throw FormatError("codes: prompt index out of range");
        Vector row(codes.cols);
        for (std::size_t j = 0; j < codes.cols; ++j) row[j] = codes.values[r * codes.cols + j];
        u.push_back(sparse_from_dense(row));
        const auto xr = pm.row(pidx[r]);
        x.emplace_back(xr.begin(), xr.end());
      }
      DecoderParams d;
      if (fd_method == "closed_form") {
        d = fit_closed_form(u, x, fd_ridge);
        d.meta.train_loss_final = mean_squared_error(d, u, x);
      } else {
        fd_sgd.loss = fd_method == "sgd_cosine" ? DecoderLoss::kCosine : DecoderLoss::kMse;
        d = fit_sgd(u, x, fd_sgd).first;
      }
      write_decoder(fd_out, d);
      std::cout << "train MSE " << fixed(mean_squared_error(d, u, x)) << "\n";
      return kOk;
    }
    if (*ss) {
      require_parent_writable(ss_out);
      const EmbeddingFile codes = read_embedding(ss_codes);
      const auto s = score_rows(read_decoder(ss_dec), codes, read_embedding(ss_prompts));
      std::vector<Json> recs;
      for (std::size_t i = 0; i < s.size(); ++i)
        recs.push_back({{"row", i}, {"response_id", i < codes.ids.size() ? codes.ids[i] : std::to_string(i)},
                        {"sas", s[i]}});
      write_file(ss_out, dump_jsonl(recs));
      return kOk;
    }
    if (*tr) {
      RunConfig rc = resolve(tr_c);
      TrainConfig t = rc.train;
      if (tr_k) t.sas_weight = *tr_k;
      if (tr_tau) t.safety_threshold = *tr_tau;
      if (tr_lr) t.lr = *tr_lr;
      if (tr_epochs) t.epochs = *tr_epochs;
      if (tr_batch) t.batch = *tr_batch;
      if (tr_curriculum) t.curriculum = true;
      t.validate();
      require_parent_writable(tr_out);
      const auto pairs = read_jsonl<PreferencePair>(tr_pairs, preference_pair_from_json);
      if (pairs.empty()) throw ConfigError("no preference pairs in '" + tr_pairs + "'");
      const TrainResult res = train(pairs, t, reward_mode_from_string(tr_mode));
      write_reward(tr_out, res.params);
      Json rep;
      rep["mode"] = tr_mode;
      rep["sas_weight"] = t.sas_weight;
      rep["epochs_run"] = res.epochs_run;
      rep["final_loss"] = res.loss_curve.back();
      rep["final_grad_norm"] = res.final_grad_norm;
      rep["converged"] = res.converged;
      rep["ate_estimate"] = ate_estimate(pairs, t.sas_weight);
      rep["loss_curve"] = res.loss_curve;
      if (!tr_report.empty()) write_file(tr_report, rep.dump(2) + "\n");
      std::cout << "final loss " << fixed(res.loss_curve.back()) << " after " << res.epochs_run << " epochs\n";
      return kOk;
    }
    if (*ep) {
      const auto pairs = read_jsonl<EvalPair>(ep_pairs, eval_pair_from_json);
      const AccuracyReport r = selection_accuracy(pairs, selection_rule_from_string(ep_rule));
      emit(ep_out, accuracy_json(r).dump(2) + "\n");
      return kOk;
    }
    if (*bn) {
      const auto sets = read_jsonl<BonCandidateSet>(bn_sets, bon_set_from_json);
      if (sets.empty()) throw ConfigError("no candidate sets in '" + bn_sets + "'");
      Json rep;
      rep["sas_weight"] = bn_w;
      rep["selected"] = Json::array();
      double artifact = 0.0;
      bool have_artifact = true;
      for (const auto& s : sets) {
        const auto& c = s.candidates[best_of_n_index(s, bn_w)];
        rep["selected"].push_back({{"prompt_id", s.prompt_id}, {"response_id", c.response_id}});
        if (c.artifact_magnitude)
          artifact += *c.artifact_magnitude;
        else
          have_artifact = false;
      }
      if (have_artifact) rep["artifact_mean"] = artifact / static_cast<double>(sets.size());
      emit(bn_out, rep.dump(2) + "\n");
      return kOk;
    }
    if (*vt) {
      const RunConfig rc = resolve(vt_c);
      require_dir_writable(vt_out);
      const TheoryReport rep = verify_theory(rc.verify);
      write_file(fs::path(vt_out) / "theory_report.json", rep.to_json());
      write_file(fs::path(vt_out) / "theory_grid.csv", rep.grid_csv());
      write_file(fs::path(vt_out) / "theory_properties.csv", rep.properties_csv());
      for (const auto& p : rep.properties)
        std::cout << (p.passed ? "PASS " : "FAIL ") << p.name << ": " << p.detail << "\n";
      return rep.all_passed() ? kOk : kFailure;
    }
    if (*pl) {
      const RunConfig rc = resolve(pl_c);
      require_dir_writable(pl_out);
      PipelineOptions opts;
      opts.resume = pl_resume;
      if (!pl_stop.empty()) opts.stop_after = pl_stop;
      const Json rep = run_pipeline(rc, pl_out, opts);
      if (rep.is_null()) {
        std::cout << "stopped after stage '" << pl_stop << "'\n";
      } else {
        std::cout << "vanilla BoN artifact mean " << fixed(rep["vanilla"]["best_of_n"]["artifact_mean"].get<double>())
                  << ", CARP " << fixed(rep["carp"]["best_of_n"]["artifact_mean"].get<double>()) << "\n";
      }
      return kOk;
    }
    if (*px) {
      require_parent_writable(px_out);
      std::vector<double> xs, ys;
      for (const auto& j : parse_jsonl(read_file(px_in))) {
        if (!j.contains(px_field) || !j[px_field].is_number())
          throw FormatError("record lacks numeric field '" + px_field + "'");
        xs.push_back(j[px_field].get<double>());
        if (!px_yfield.empty()) {
          if (!j.contains(px_yfield) || !j[px_yfield].is_number())
            throw FormatError("record lacks numeric field '" + px_yfield + "'");
          ys.push_back(j[px_yfield].get<double>());
        }
      }
      std::ostringstream out;
      out << std::setprecision(17);
      if (px_yfield.empty()) {
        const Histogram h = distribution_report(xs, px_bins);
        out << "# lo hi count (" << px_field << ")\n";
        for (std::size_t b = 0; b < h.counts.size(); ++b)
          out << h.edges[b] << ' ' << h.edges[b + 1] << ' ' << h.counts[b] << '\n';
      } else {
        out << "# " << px_field << ' ' << px_yfield << '\n';
        for (std::size_t i = 0; i < xs.size(); ++i) out << xs[i] << ' ' << ys[i] << '\n';
      }
      write_file(px_out, out.str());
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
