#pragma once

// On-disk artifacts: CARPEMB1 embedding matrices, CARPDEC1 decoders,
// CARPRM1 reward models and JSONL records.
//
// Binary layouts (all integers and floats little-endian):
//   CARPEMB1  magic[8] u32 rows u32 cols f32[rows*cols] footer-json
//   CARPDEC1  magic[8] u32 prompt_dim u32 code_dim f64[prompt_dim*code_dim] f64[prompt_dim] footer-json
//   CARPRM1   magic[8] ("CARPRM1\0") u8 mode u32 dim f64[dim] footer-json
// The footer runs to end of file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "carp/decoder.hpp"
#include "carp/evalharness.hpp"
#include "carp/numkit.hpp"
#include "carp/reward.hpp"

namespace carp {

using Json = nlohmann::ordered_json;

struct EmbeddingFile {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;  // row-major
  std::vector<std::string> ids;
  std::string producer;
  Json extra = Json::object();  // free-form metadata

  static EmbeddingFile from_matrix(const Matrix& m, std::vector<std::string> ids, std::string producer);
  Matrix to_matrix() const;

  friend bool operator==(const EmbeddingFile&, const EmbeddingFile&) = default;
};

std::string encode_embedding(const EmbeddingFile& f);
EmbeddingFile decode_embedding(const std::string& bytes);

std::string encode_decoder(const DecoderParams& p);
DecoderParams decode_decoder(const std::string& bytes);

std::string encode_reward(const RewardParams& p);
RewardParams decode_reward(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so a failed write leaves
/// no partial file behind.
void write_file(const std::filesystem::path& path, const std::string& bytes);

void write_embedding(const std::filesystem::path& path, const EmbeddingFile& f);
EmbeddingFile read_embedding(const std::filesystem::path& path);
void write_decoder(const std::filesystem::path& path, const DecoderParams& p);
DecoderParams read_decoder(const std::filesystem::path& path);
void write_reward(const std::filesystem::path& path, const RewardParams& p);
RewardParams read_reward(const std::filesystem::path& path);

// JSONL records: one object per line; blank lines are skipped.
Json to_json(const PreferencePair& p);
PreferencePair preference_pair_from_json(const Json& j);
Json to_json(const EvalPair& p);
EvalPair eval_pair_from_json(const Json& j);
Json to_json(const BonCandidateSet& s);
BonCandidateSet bon_set_from_json(const Json& j);

std::vector<Json> parse_jsonl(const std::string& text);
std::string dump_jsonl(const std::vector<Json>& records);

template <class T, class F>
std::vector<T> read_jsonl(const std::filesystem::path& path, F&& from_json) {
  std::vector<T> out;
  for (const auto& j : parse_jsonl(read_file(path))) out.push_back(from_json(j));
  return out;
}

template <class T>
std::string records_to_jsonl(const std::vector<T>& records) {
  std::vector<Json> js;
  js.reserve(records.size());
  for (const auto& r : records) js.push_back(to_json(r));
  return dump_jsonl(js);
}

}  // namespace carp
