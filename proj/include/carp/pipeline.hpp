#pragma once

// End-to-end synthetic pipeline. Every stage reads its inputs from the run
// directory and writes its outputs there, so any stage can be rerun or
// resumed from the artifacts of the previous ones.
//
//   generate      world_proj, {train,pref,bon}_{x,y}, train_{clean,z}, pref_labels.jsonl, manifest.json
//   encode        {train,pref,bon}_codes
//   fit-decoder   decoder.carpdec
//   score         {pref,bon}_sas.jsonl
//   train         pairs.jsonl, rm_vanilla.carprm, rm_carp.carprm
//   evaluate      bon_vanilla.jsonl, bon_carp.jsonl, report.json

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "carp/config.hpp"
#include "carp/errors.hpp"
#include "carp/fileio.hpp"

namespace carp {

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

const std::vector<std::string>& pipeline_stages();

void stage_generate(const RunConfig& c, const std::filesystem::path& dir);
void stage_encode(const RunConfig& c, const std::filesystem::path& dir);
void stage_fit_decoder(const RunConfig& c, const std::filesystem::path& dir);
void stage_score(const RunConfig& c, const std::filesystem::path& dir);
void stage_train(const RunConfig& c, const std::filesystem::path& dir);
void stage_evaluate(const RunConfig& c, const std::filesystem::path& dir);

struct PipelineOptions {
  bool resume = false;                   // skip stages stamped with the same config hash
  std::optional<std::string> stop_after;  // stage name
};

/// Runs the stages in order and returns the final report (or null when
/// stopped early). Failures are rethrown as StageError.
Json run_pipeline(const RunConfig& c, const std::filesystem::path& dir, const PipelineOptions& opts = {});

/// TopK-encodes every row of `responses` through `proj`; copies row metadata.
EmbeddingFile encode_embedding_rows(const EmbeddingFile& proj, const EmbeddingFile& responses, std::size_t topk);

/// Per-row SAS of stored codes against the prompt rows named by the codes'
/// "prompt_index" metadata.
std::vector<double> score_rows(const DecoderParams& decoder, const EmbeddingFile& codes, const EmbeddingFile& prompts);

/// Row → prompt mapping stored in an embedding's metadata.
std::vector<std::size_t> prompt_index(const EmbeddingFile& f);

}  // namespace carp
