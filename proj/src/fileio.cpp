#include "carp/fileio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "carp/errors.hpp"

namespace carp {

namespace {

constexpr char kEmbMagic[8] = {'C', 'A', 'R', 'P', 'E', 'M', 'B', '1'};
constexpr char kDecMagic[8] = {'C', 'A', 'R', 'P', 'D', 'E', 'C', '1'};
constexpr char kRmMagic[8] = {'C', 'A', 'R', 'P', 'R', 'M', '1', '\0'};

class Writer {
 public:
  void magic(const char (&m)[8]) { out_.append(m, 8); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { out_ += s; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, const char* format) : bytes_(bytes), format_(format) {}

  void magic(const char (&m)[8]) {
    need(8, "magic");
    if (std::memcmp(bytes_.data(), m, 8) != 0)
      throw FormatError(std::string(format_) + ": bad magic (not a " + format_ + " file)");
    pos_ += 8;
  }
  std::uint8_t u8() {
    need(1, "header");
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4, "header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  /// Ensures `n` more bytes exist; the diagnostic names expected vs found sizes.
  void need(std::uint64_t n, const char* what) const {
    const std::uint64_t have = bytes_.size() - pos_;
    if (have < n) {
      std::ostringstream e;
      e << format_ << ": truncated " << what << ": expected " << n << " bytes at offset " << pos_ << ", found "
        << have << " (file size " << bytes_.size() << ")";
      throw FormatError(e.str());
    }
  }
  Json footer() const {
    const std::string tail = bytes_.substr(pos_);
    try {
      Json j = Json::parse(tail);
      if (!j.is_object()) throw FormatError(std::string(format_) + ": footer is not a JSON object");
      return j;
    } catch (const Json::parse_error& e) {
      throw FormatError(std::string(format_) + ": malformed JSON footer: " + e.what());
    }
  }

 private:
  const std::string& bytes_;
  const char* format_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw DimensionError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

EmbeddingFile EmbeddingFile::from_matrix(const Matrix& m, std::vector<std::string> ids, std::string producer) {
  if (!ids.empty() && ids.size() != m.rows()) throw DimensionError("EmbeddingFile: ids must match rows");
  EmbeddingFile f;
  f.rows = checked_u32(m.rows(), "rows");
  f.cols = checked_u32(m.cols(), "cols");
  f.values.resize(m.data().size());
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = static_cast<float>(m.data()[i]);
  f.ids = std::move(ids);
  f.producer = std::move(producer);
  return f;
}

Matrix EmbeddingFile::to_matrix() const {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
  return m;
}

std::string encode_embedding(const EmbeddingFile& f) {
  if (f.values.size() != static_cast<std::size_t>(f.rows) * f.cols)
    throw DimensionError("encode_embedding: payload size differs from rows*cols");
  Writer w;
  w.magic(kEmbMagic);
  w.u32(f.rows);
  w.u32(f.cols);
  for (float v : f.values) w.f32(v);
  Json footer;
  footer["dtype"] = "float32";
  footer["ids"] = f.ids;
  footer["producer"] = f.producer;
  footer["extra"] = f.extra;
  w.raw(footer.dump());
  return w.take();
}

EmbeddingFile decode_embedding(const std::string& bytes) {
  Reader r(bytes, "CARPEMB1");
  r.magic(kEmbMagic);
  EmbeddingFile f;
  f.rows = r.u32();
  f.cols = r.u32();
  const std::uint64_t n = static_cast<std::uint64_t>(f.rows) * f.cols;
  r.need(n * 4, "payload");
  f.values.resize(n);
  for (auto& v : f.values) v = r.f32();
  const Json footer = r.footer();
  if (footer.value("dtype", "") != "float32") throw FormatError("CARPEMB1: footer dtype must be float32");
  f.ids = footer.value("ids", std::vector<std::string>{});
  if (!f.ids.empty() && f.ids.size() != f.rows)
    throw FormatError("CARPEMB1: footer lists " + std::to_string(f.ids.size()) + " ids for " +
                      std::to_string(f.rows) + " rows");
  f.producer = footer.value("producer", "");
  f.extra = footer.contains("extra") ? footer["extra"] : Json::object();
  return f;
}

std::string encode_decoder(const DecoderParams& p) {
  if (p.bias.size() != p.prompt_dim()) throw DimensionError("encode_decoder: bias length differs from prompt_dim");
  Writer w;
  w.magic(kDecMagic);
  w.u32(checked_u32(p.prompt_dim(), "prompt_dim"));
  w.u32(checked_u32(p.code_dim(), "code_dim"));
  for (double v : p.weight.data()) w.f64(v);
  for (double v : p.bias) w.f64(v);
  Json footer;
  footer["fit_method"] = p.meta.fit_method;
  footer["ridge_bits"] = std::bit_cast<std::uint64_t>(p.meta.ridge);
  footer["ridge"] = p.meta.ridge;
  footer["epochs"] = p.meta.epochs;
  footer["lr_bits"] = std::bit_cast<std::uint64_t>(p.meta.lr);
  footer["train_loss_final_bits"] = std::bit_cast<std::uint64_t>(p.meta.train_loss_final);
  footer["samples"] = p.meta.samples;
  w.raw(footer.dump());
  return w.take();
}

DecoderParams decode_decoder(const std::string& bytes) {
  Reader r(bytes, "CARPDEC1");
  r.magic(kDecMagic);
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
  r.need((n + rows) * 8, "parameters");
  DecoderParams p;
  p.weight = Matrix(rows, cols);
  for (auto& v : p.weight.data()) v = r.f64();
  p.bias.resize(rows);
  for (auto& v : p.bias) v = r.f64();
  const Json footer = r.footer();
  try {
    p.meta.fit_method = footer.at("fit_method").get<std::string>();
    p.meta.ridge = std::bit_cast<double>(footer.at("ridge_bits").get<std::uint64_t>());
    p.meta.epochs = footer.at("epochs").get<std::size_t>();
    p.meta.lr = std::bit_cast<double>(footer.at("lr_bits").get<std::uint64_t>());
    p.meta.train_loss_final = std::bit_cast<double>(footer.at("train_loss_final_bits").get<std::uint64_t>());
    p.meta.samples = footer.at("samples").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("CARPDEC1: incomplete footer: ") + e.what());
  }
  return p;
}

std::string encode_reward(const RewardParams& p) {
  Writer w;
  w.magic(kRmMagic);
  w.u8(p.mode == RewardMode::kLinear ? 0 : 1);
  w.u32(checked_u32(p.theta.size(), "theta"));
  for (double v : p.theta) w.f64(v);
  Json footer;
  footer["mode"] = to_string(p.mode);
  w.raw(footer.dump());
  return w.take();
}

RewardParams decode_reward(const std::string& bytes) {
  Reader r(bytes, "CARPRM1");
  r.magic(kRmMagic);
  RewardParams p;
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError("CARPRM1: unknown mode byte " + std::to_string(mode));
  p.mode = mode == 0 ? RewardMode::kLinear : RewardMode::kTabular;
  const std::uint32_t dim = r.u32();
  r.need(static_cast<std::uint64_t>(dim) * 8, "parameters");
  p.theta.resize(dim);
  for (auto& v : p.theta) v = r.f64();
  r.footer();
  return p;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "' for reading");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::filesystem::remove(tmp);
      throw ConfigError("write to '" + path.string() + "' failed");
    }
  }
  std::filesystem::rename(tmp, path);
}

void write_embedding(const std::filesystem::path& path, const EmbeddingFile& f) { write_file(path, encode_embedding(f)); }
EmbeddingFile read_embedding(const std::filesystem::path& path) { return decode_embedding(read_file(path)); }
void write_decoder(const std::filesystem::path& path, const DecoderParams& p) { write_file(path, encode_decoder(p)); }
DecoderParams read_decoder(const std::filesystem::path& path) { return decode_decoder(read_file(path)); }
void write_reward(const std::filesystem::path& path, const RewardParams& p) { write_file(path, encode_reward(p)); }
RewardParams read_reward(const std::filesystem::path& path) { return decode_reward(read_file(path)); }

namespace {

template <class T>
T field(const Json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("record is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("record field '") + key + "' has the wrong type: " + e.what());
  }
}

}  // namespace

Json to_json(const PreferencePair& p) {
  Json j;
  j["pair_id"] = p.pair_id;
  j["chosen_id"] = p.chosen_id;
  j["rejected_id"] = p.rejected_id;
  if (!p.features_chosen.empty()) j["features_chosen"] = p.features_chosen;
  if (!p.features_rejected.empty()) j["features_rejected"] = p.features_rejected;
  j["sas_chosen"] = p.sas_chosen;
  j["sas_rejected"] = p.sas_rejected;
  return j;
}

PreferencePair preference_pair_from_json(const Json& j) {
  PreferencePair p;
  p.pair_id = field<std::string>(j, "pair_id");
  p.chosen_id = field<std::size_t>(j, "chosen_id");
  p.rejected_id = field<std::size_t>(j, "rejected_id");
  if (j.contains("features_chosen")) p.features_chosen = field<Vector>(j, "features_chosen");
  if (j.contains("features_rejected")) p.features_rejected = field<Vector>(j, "features_rejected");
  if (j.contains("sas_chosen")) p.sas_chosen = field<double>(j, "sas_chosen");
  if (j.contains("sas_rejected")) p.sas_rejected = field<double>(j, "sas_rejected");
  return p;
}

Json to_json(const EvalPair& p) {
  Json j;
  j["pair_id"] = p.pair_id;
  j["score_a"] = p.score_a;
  j["score_b"] = p.score_b;
  j["label"] = to_string(p.label);
  j["domain_tag"] = p.domain_tag;
  return j;
}

EvalPair eval_pair_from_json(const Json& j) {
  EvalPair p;
  p.pair_id = field<std::string>(j, "pair_id");
  p.score_a = field<double>(j, "score_a");
  p.score_b = field<double>(j, "score_b");
  p.label = preferred_from_string(field<std::string>(j, "label"));
  if (j.contains("domain_tag")) p.domain_tag = field<std::string>(j, "domain_tag");
  return p;
}

Json to_json(const BonCandidateSet& s) {
  Json j;
  j["prompt_id"] = s.prompt_id;
  j["candidates"] = Json::array();
  for (const auto& c : s.candidates) {
    Json e;
    e["response_id"] = c.response_id;
    e["reward"] = c.reward;
    e["sas"] = c.sas;
    if (c.artifact_magnitude) e["artifact_magnitude"] = *c.artifact_magnitude;
    j["candidates"].push_back(e);
  }
  return j;
}

BonCandidateSet bon_set_from_json(const Json& j) {
  BonCandidateSet s;
  s.prompt_id = field<std::string>(j, "prompt_id");
  if (!j.contains("candidates") || !j["candidates"].is_array()) throw FormatError("record is missing 'candidates'");
  for (const auto& e : j["candidates"]) {
    BonCandidate c;
    c.response_id = field<std::string>(e, "response_id");
    c.reward = field<double>(e, "reward");
    c.sas = field<double>(e, "sas");
    if (e.contains("artifact_magnitude")) c.artifact_magnitude = field<double>(e, "artifact_magnitude");
    s.candidates.push_back(std::move(c));
  }
  return s;
}

std::vector<Json> parse_jsonl(const std::string& text) {
  std::vector<Json> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw FormatError("JSONL line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!out.back().is_object()) throw FormatError("JSONL line " + std::to_string(lineno) + ": not an object");
  }
  return out;
}

std::string dump_jsonl(const std::vector<Json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

}  // namespace carp
