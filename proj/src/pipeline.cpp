#include "carp/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "carp/causalgen.hpp"
#include "carp/decoder.hpp"
#include "carp/encoder.hpp"
#include "carp/evalharness.hpp"
#include "carp/reward.hpp"

namespace carp {

namespace fs = std::filesystem;

namespace {

Matrix rows_to_matrix(const std::vector<Vector>& rows, std::size_t cols) {
  Matrix m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
  return m;
}

EmbeddingFile make_file(const std::vector<Vector>& rows, std::size_t cols, std::vector<std::string> ids,
                        const char* producer) {
  return EmbeddingFile::from_matrix(rows_to_matrix(rows, cols), std::move(ids), producer);
}

std::string id(const char* prefix, std::size_t a) { return prefix + std::to_string(a); }
std::string id(const char* prefix, std::size_t a, std::size_t b) {
  return prefix + std::to_string(a) + "-" + std::to_string(b);
}

struct Candidate {
  Vector y;
  Vector z;
  double artifact_magnitude = 0.0;
  double corruption = 0.0;
  double quality = 0.0;
  double utility = 0.0;  // annotator's private utility
};

Candidate draw_candidate(const WorldMaps& world, const GenConfig& gen, const TaskConfig& task, const Vector& w,
                         Rng& rng) {
  Candidate c;
  const double scale = task.artifact_scale_lo + (task.artifact_scale_hi - task.artifact_scale_lo) * rng.uniform();
  c.corruption = task.corruption_max * rng.uniform();
  const Intent answered = corrupt_intent(world, gen, w, c.corruption, rng);
  c.y = respond(world, gen, answered.clean_signal, scale, rng, &c.z);
  Vector g = c.y;
  for (std::size_t k = 0; k < g.size(); ++k) g[k] -= answered.clean_signal[k];
  c.artifact_magnitude = norm2(g);
  c.quality = -c.corruption + task.quality_noise * rng.gaussian();
  c.utility = -c.corruption + task.label_artifact_coupling * c.artifact_magnitude + task.label_noise * rng.gaussian();
  return c;
}

struct CandidateTable {
  std::vector<Vector> x, y;
  std::vector<std::string> prompt_ids, response_ids;
  std::vector<std::size_t> prompt;
  std::vector<double> artifact, corruption, quality;

  void add(std::size_t p, const std::string& rid, const Candidate& c) {
    y.push_back(c.y);
    response_ids.push_back(rid);
    prompt.push_back(p);
    artifact.push_back(c.artifact_magnitude);
    corruption.push_back(c.corruption);
    quality.push_back(c.quality);
  }

  void write(const fs::path& dir, const std::string& name, const GenConfig& gen) const {
    write_embedding(dir / (name + "_x.carpemb"), make_file(x, gen.d_x, prompt_ids, "carp generate"));
    EmbeddingFile yf = make_file(y, gen.d, response_ids, "carp generate");
    yf.extra["prompt_index"] = prompt;
    yf.extra["artifact_magnitude"] = artifact;
    yf.extra["corruption"] = corruption;
    yf.extra["quality"] = quality;
    write_embedding(dir / (name + "_y.carpemb"), yf);
  }
};

std::vector<double> extra_doubles(const EmbeddingFile& f, const char* key) {
  if (!f.extra.contains(key)) throw FormatError(std::string("embedding metadata lacks '") + key + "'");
  auto v = f.extra[key].get<std::vector<double>>();
  if (v.size() != f.rows) throw FormatError(std::string("embedding metadata '") + key + "' has the wrong length");
  return v;
}

Vector row_vector(const EmbeddingFile& f, std::size_t r) {
  Vector v(f.cols);
  for (std::size_t j = 0; j < f.cols; ++j) v[j] = f.values[r * f.cols + j];
  return v;
}

std::vector<Json> sas_records(const EmbeddingFile& codes, const std::vector<double>& s) {
  std::vector<Json> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    Json j;
    j["row"] = i;
    j["response_id"] = i < codes.ids.size() ? codes.ids[i] : std::to_string(i);
    j["sas"] = s[i];
    out.push_back(j);
  }
  return out;
}

std::vector<double> read_sas(const fs::path& path, std::size_t expected) {
  std::vector<double> s;
  for (const auto& j : parse_jsonl(read_file(path))) s.push_back(j.at("sas").get<double>());
  if (s.size() != expected)
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " SAS records, found " +
                      std::to_string(s.size()));
  return s;
}

Vector response_features(const EmbeddingFile& y, const std::vector<double>& quality, std::size_t r) {
  return {norm2(row_vector(y, r)), quality[r]};
}

Json bon_summary(const std::vector<BonCandidateSet>& sets, const std::vector<std::vector<double>>& corruption) {
  double artifact = 0.0, corr = 0.0, s = 0.0;
  for (std::size_t t = 0; t < sets.size(); ++t) {
    const std::size_t k = best_of_n_index(sets[t], 0.0);
    artifact += *sets[t].candidates[k].artifact_magnitude;
    corr += corruption[t][k];
    s += sets[t].candidates[k].sas;
  }
  const double n = static_cast<double>(sets.size());
  return {{"artifact_mean", artifact / n}, {"corruption_mean", corr / n}, {"sas_mean", s / n}};
}

void stamp(const fs::path& dir, const std::string& stage, const std::string& hash) {
  fs::create_directories(dir / "stages");
  write_file(dir / "stages" / (stage + ".done"), hash + "\n");
}

bool stamped(const fs::path& dir, const std::string& stage, const std::string& hash) {
  const fs::path p = dir / "stages" / (stage + ".done");
  return fs::exists(p) && read_file(p) == hash + "\n";
}

}  // namespace

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> names{"generate", "encode", "fit-decoder", "score", "train", "evaluate"};
  return names;
}

std::vector<std::size_t> prompt_index(const EmbeddingFile& f) {
  if (!f.extra.contains("prompt_index")) throw FormatError("embedding metadata lacks 'prompt_index'");
  auto v = f.extra["prompt_index"].get<std::vector<std::size_t>>();
  if (v.size() != f.rows) throw FormatError("embedding metadata 'prompt_index' has the wrong length");
  return v;
}

void stage_generate(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  const GenConfig& gen = c.gen;
  const WorldMaps world = build_world(gen);
  Json files = Json::object();
  auto note = [&files](const std::string& name, std::size_t rows, std::size_t cols) {
    files[name] = {{"rows", rows}, {"cols", cols}};
  };

  write_embedding(dir / "world_proj.carpemb", EmbeddingFile::from_matrix(world.proj, {}, "carp generate"));
  note("world_proj.carpemb", world.proj.rows(), world.proj.cols());

  const auto samples = sample_dataset(world, gen);
  std::vector<Vector> x, clean, y, z;
  std::vector<std::string> pids, rids;
  std::vector<std::size_t> pindex;
  for (const auto& s : samples) {
    x.push_back(s.x);
    clean.push_back(s.clean_signal);
    pids.push_back(id("p", s.prompt_id));
    for (std::size_t j = 0; j < s.responses.size(); ++j) {
      y.push_back(s.responses[j].y);
      z.push_back(s.responses[j].z);
      rids.push_back(id("p", s.prompt_id, j));
      pindex.push_back(s.prompt_id);
    }
  }
  write_embedding(dir / "train_x.carpemb", make_file(x, gen.d_x, pids, "carp generate"));
  write_embedding(dir / "train_clean.carpemb", make_file(clean, gen.d, pids, "carp generate"));
  EmbeddingFile yf = make_file(y, gen.d, rids, "carp generate");
  yf.extra["prompt_index"] = pindex;
  write_embedding(dir / "train_y.carpemb", yf);
  EmbeddingFile zf = make_file(z, gen.d_z, rids, "carp generate");
  zf.extra["prompt_index"] = pindex;
  write_embedding(dir / "train_z.carpemb", zf);
  note("train_x.carpemb", x.size(), gen.d_x);
  note("train_clean.carpemb", clean.size(), gen.d);
  note("train_y.carpemb", y.size(), gen.d);
  note("train_z.carpemb", z.size(), gen.d_z);

  // Preference pairs: two candidates per prompt, labeled by the annotator's utility.
  CandidateTable pref;
  std::vector<Json> labels;
  for (std::size_t t = 0; t < c.task.pref_pairs; ++t) {
    Rng rng = Rng::for_stream(gen.seed, stream::kPreference, t);
    const Intent intent = draw_intent(world, gen, rng);
    pref.x.push_back(intent.x);
    pref.prompt_ids.push_back(id("q", t));
    const Candidate a = draw_candidate(world, gen, c.task, intent.w, rng);
    const Candidate b = draw_candidate(world, gen, c.task, intent.w, rng);
    pref.add(t, id("q", t, 0), a);
    pref.add(t, id("q", t, 1), b);
    const bool a_wins = a.utility >= b.utility;
    Json l;
    l["pair_id"] = id("q", t);
    l["chosen_id"] = 2 * t + (a_wins ? 0 : 1);
    l["rejected_id"] = 2 * t + (a_wins ? 1 : 0);
    labels.push_back(l);
  }
  pref.write(dir, "pref", gen);
  write_file(dir / "pref_labels.jsonl", dump_jsonl(labels));
  note("pref_x.carpemb", pref.x.size(), gen.d_x);
  note("pref_y.carpemb", pref.y.size(), gen.d);

  CandidateTable bon;
  for (std::size_t t = 0; t < c.task.bon_sets; ++t) {
    Rng rng = Rng::for_stream(gen.seed, stream::kCandidates, t);
    const Intent intent = draw_intent(world, gen, rng);
    bon.x.push_back(intent.x);
    bon.prompt_ids.push_back(id("b", t));
    for (std::size_t j = 0; j < c.task.bon_candidates; ++j)
      bon.add(t, id("b", t, j), draw_candidate(world, gen, c.task, intent.w, rng));
  }
  bon.write(dir, "bon", gen);
  note("bon_x.carpemb", bon.x.size(), gen.d_x);
  note("bon_y.carpemb", bon.y.size(), gen.d);

  Json manifest;
  manifest["producer"] = "carp generate";
  manifest["seed"] = gen.seed;
  manifest["config_hash"] = config_hash(c);
  manifest["config"] = canonical_json(c);
  manifest["files"] = files;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

EmbeddingFile encode_embedding_rows(const EmbeddingFile& proj, const EmbeddingFile& responses, std::size_t topk) {
  if (proj.cols != responses.cols)
    throw DimensionError("encode: projection has " + std::to_string(proj.cols) + " columns, responses have " +
                         std::to_string(responses.cols));
  if (topk < 1 || topk > proj.rows) throw ConfigError("encode: topk must lie in [1, width]");
  const Matrix p = proj.to_matrix();
  std::vector<Vector> codes;
  codes.reserve(responses.rows);
  for (std::size_t r = 0; r < responses.rows; ++r) codes.push_back(encode(p, row_vector(responses, r), topk).dense);
  EmbeddingFile out = make_file(codes, proj.rows, responses.ids, "carp encode");
  out.extra = responses.extra;
  out.extra["topk"] = topk;
  return out;
}

void stage_encode(const RunConfig& c, const fs::path& dir) {
  const EmbeddingFile proj = read_embedding(dir / "world_proj.carpemb");
  for (const char* name : {"train", "pref", "bon"}) {
    const EmbeddingFile y = read_embedding(dir / (std::string(name) + "_y.carpemb"));
    write_embedding(dir / (std::string(name) + "_codes.carpemb"), encode_embedding_rows(proj, y, c.gen.topk));
  }
}

void stage_fit_decoder(const RunConfig&, const fs::path& dir) {
  const EmbeddingFile codes = read_embedding(dir / "train_codes.carpemb");
  const EmbeddingFile prompts = read_embedding(dir / "train_x.carpemb");
  const auto pidx = prompt_index(codes);
  std::vector<SparseCode> u;
  std::vector<Vector> x;
  for (std::size_t r = 0; r < codes.rows; ++r) {
    if (pidx[r] >= prompts.rows) throw FormatError("train_codes: prompt index out of range");
    u.push_back(sparse_from_dense(row_vector(codes, r)));
    x.push_back(row_vector(prompts, pidx[r]));
  }
  DecoderParams d = fit_closed_form(u, x);
  d.meta.train_loss_final = mean_squared_error(d, u, x);
  write_decoder(dir / "decoder.carpdec", d);
}

std::vector<double> score_rows(const DecoderParams& decoder, const EmbeddingFile& codes, const EmbeddingFile& prompts) {
  const auto pidx = prompt_index(codes);
  std::vector<double> s(codes.rows);
  for (std::size_t r = 0; r < codes.rows; ++r) {
    if (pidx[r] >= prompts.rows) throw FormatError("codes: prompt index out of range");
    s[r] = sas(decoder, sparse_from_dense(row_vector(codes, r)), row_vector(prompts, pidx[r]));
  }
  return s;
}

void stage_score(const RunConfig&, const fs::path& dir) {
  const DecoderParams decoder = read_decoder(dir / "decoder.carpdec");
  for (const char* name : {"pref", "bon"}) {
    const std::string n(name);
    const EmbeddingFile codes = read_embedding(dir / (n + "_codes.carpemb"));
    const EmbeddingFile prompts = read_embedding(dir / (n + "_x.carpemb"));
    write_file(dir / (n + "_sas.jsonl"), dump_jsonl(sas_records(codes, score_rows(decoder, codes, prompts))));
  }
}

void stage_train(const RunConfig& c, const fs::path& dir) {
  const EmbeddingFile y = read_embedding(dir / "pref_y.carpemb");
  const auto quality = extra_doubles(y, "quality");
  const auto s = read_sas(dir / "pref_sas.jsonl", y.rows);
  std::vector<PreferencePair> pairs;
  for (const auto& l : parse_jsonl(read_file(dir / "pref_labels.jsonl"))) {
    PreferencePair p;
    p.pair_id = l.at("pair_id").get<std::string>();
    p.chosen_id = l.at("chosen_id").get<std::size_t>();
    p.rejected_id = l.at("rejected_id").get<std::size_t>();
    if (p.chosen_id >= y.rows || p.rejected_id >= y.rows) throw FormatError("pref_labels: response id out of range");
    p.features_chosen = response_features(y, quality, p.chosen_id);
    p.features_rejected = response_features(y, quality, p.rejected_id);
    p.sas_chosen = s[p.chosen_id];
    p.sas_rejected = s[p.rejected_id];
    pairs.push_back(std::move(p));
  }
  write_file(dir / "pairs.jsonl", records_to_jsonl(pairs));

  TrainConfig vanilla = c.train;
  vanilla.sas_weight = 0.0;
  const TrainResult rv = train(pairs, vanilla, RewardMode::kLinear);
  const TrainResult rc = train(pairs, c.train, RewardMode::kLinear);
  write_reward(dir / "rm_vanilla.carprm", rv.params);
  write_reward(dir / "rm_carp.carprm", rc.params);
  Json log;
  log["vanilla_final_loss"] = rv.loss_curve.back();
  log["carp_final_loss"] = rc.loss_curve.back();
  log["ate_estimate"] = ate_estimate(pairs, c.train.sas_weight);
  write_file(dir / "train_log.json", log.dump(2) + "\n");
}

void stage_evaluate(const RunConfig& c, const fs::path& dir) {
  const EmbeddingFile y = read_embedding(dir / "bon_y.carpemb");
  const auto quality = extra_doubles(y, "quality");
  const auto artifact = extra_doubles(y, "artifact_magnitude");
  const auto corruption = extra_doubles(y, "corruption");
  const auto pidx = prompt_index(y);
  const auto s = read_sas(dir / "bon_sas.jsonl", y.rows);
  const Json log = Json::parse(read_file(dir / "train_log.json"));

  Json report;
  report["config_hash"] = config_hash(c);
  report["sas_weight"] = c.train.sas_weight;
  report["ate_estimate"] = log.at("ate_estimate");
  for (const char* which : {"vanilla", "carp"}) {
    const std::string w(which);
    const RewardParams rm = read_reward(dir / ("rm_" + w + ".carprm"));
    std::vector<BonCandidateSet> sets;
    std::vector<std::vector<double>> corr;
    for (std::size_t r = 0; r < y.rows; ++r) {
      const std::size_t p = pidx[r];
      if (p >= sets.size()) {
        sets.resize(p + 1);
        corr.resize(p + 1);
      }
      sets[p].prompt_id = id("b", p);
      const Vector phi = response_features(y, quality, r);
      BonCandidate cand;
      cand.response_id = y.ids[r];
      cand.reward = dot(rm.theta, phi);
      cand.sas = s[r];
      cand.artifact_magnitude = artifact[r];
      sets[p].candidates.push_back(std::move(cand));
      corr[p].push_back(corruption[r]);
    }
    write_file(dir / ("bon_" + w + ".jsonl"), records_to_jsonl(sets));
    Json part;
    part["theta"] = rm.theta;
    part["final_loss"] = log.at(w + "_final_loss");
    part["best_of_n"] = bon_summary(sets, corr);
    report[w] = part;
  }
  report["carp_artifact_below_vanilla"] = report["carp"]["best_of_n"]["artifact_mean"].get<double>() <
                                          report["vanilla"]["best_of_n"]["artifact_mean"].get<double>();
  write_file(dir / "report.json", report.dump(2) + "\n");
}

Json run_pipeline(const RunConfig& c, const fs::path& dir, const PipelineOptions& opts) {
  c.validate();
  if (opts.stop_after) {
    const auto& names = pipeline_stages();
    if (std::find(names.begin(), names.end(), *opts.stop_after) == names.end())
      throw ConfigError("unknown stage '" + *opts.stop_after + "'");
  }
  fs::create_directories(dir);
  const std::string hash = config_hash(c);
  using StageFn = void (*)(const RunConfig&, const fs::path&);
  const std::vector<StageFn> fns{stage_generate, stage_encode, stage_fit_decoder, stage_score, stage_train,
                                 stage_evaluate};
  for (std::size_t i = 0; i < fns.size(); ++i) {
    const std::string& name = pipeline_stages()[i];
    if (!(opts.resume && stamped(dir, name, hash))) {
      fs::remove(dir / "stages" / (name + ".done"));
      try {
        fns[i](c, dir);
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(name, e.what());
      }
      stamp(dir, name, hash);
    }
    if (opts.stop_after && *opts.stop_after == name) return Json();
  }
  return Json::parse(read_file(dir / "report.json"));
}

}  // namespace carp
