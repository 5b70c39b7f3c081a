#include "rnng/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rnng/errors.hpp"

namespace rnng {

namespace {

const char* kMagic = "rnng-checkpoint 1";

void write_f32_le(std::ostream& os, float v) {
  uint32_t bits = std::bit_cast<uint32_t>(v);
  char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
               static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  os.write(b, 4);
}

float read_f32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint: truncated float record");
  uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                  (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::string expect_line(std::istream& is, const char* what) {
  std::string line;
  if (!std::getline(is, line)) throw DataError(std::string("checkpoint: missing ") + what);
  return line;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const CheckpointMeta& meta) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot write " + path);
  const ModelConfig& c = model.config();
  f << kMagic << '\n';
  f << "embedding " << c.embedding << '\n';
  f << "hidden " << c.hidden << '\n';
  f << "layers " << c.layers << '\n';
  f << "compose_hidden " << c.hc() << '\n';
  f << "mlp_hidden " << c.hm() << '\n';
  f << "vocab " << c.vocab << '\n';
  f << "num_nts " << c.num_nts << '\n';
  f << "dropout " << c.dropout << '\n';
  f << "subword " << (c.subword ? 1 : 0) << '\n';
  f << "tie_embeddings " << (c.tie_embeddings ? 1 : 0) << '\n';
  f << "preset " << (c.preset.empty() ? "-" : c.preset) << '\n';
  f << "vocab_digest " << meta.vocab_digest << '\n';
  f << "merges_digest " << meta.merges_digest << '\n';
  f << "seed " << meta.seed << '\n';
  f << "step " << meta.step << '\n';
  f << "params\n";
  model.params().for_each([&](const std::string& name, Tensor& t) {
    f << name;
    for (size_t d = 0; d < t.ndim(); ++d) f << ' ' << t.shape()[d];
    f << '\n';
    for (int64_t i = 0; i < t.size(); ++i) write_f32_le(f, static_cast<float>(t.at(i)));
    f << '\n';
  });
  f << "end\n";
  if (!f) throw DataError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, Dtype dt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot read " + path);
  if (expect_line(f, "magic") != kMagic) throw DataError("checkpoint: bad magic in " + path);

  CheckpointMeta meta;
  ModelConfig& c = meta.config;
  auto kv = [&](const char* key) -> std::string {
    std::string line = expect_line(f, key);
    std::istringstream is(line);
    std::string k, v;
    is >> k >> v;
    if (k != key) throw DataError("checkpoint: expected '" + std::string(key) + "', got '" + k + "'");
    return v;
  };
  c.embedding = std::stoll(kv("embedding"));
  c.hidden = std::stoll(kv("hidden"));
  c.layers = std::stoll(kv("layers"));
  c.compose_hidden = std::stoll(kv("compose_hidden"));
  c.mlp_hidden = std::stoll(kv("mlp_hidden"));
  c.vocab = std::stoll(kv("vocab"));
  c.num_nts = std::stoll(kv("num_nts"));
  c.dropout = std::stod(kv("dropout"));
  c.subword = kv("subword") == "1";
  c.tie_embeddings = kv("tie_embeddings") == "1";
  std::string preset = kv("preset");
  c.preset = preset == "-" ? "" : preset;
  meta.vocab_digest = std::stoull(kv("vocab_digest"));
  meta.merges_digest = std::stoull(kv("merges_digest"));
  meta.seed = std::stoull(kv("seed"));
  meta.step = std::stoll(kv("step"));
  if (expect_line(f, "params header") != "params")
    throw DataError("checkpoint: missing params block");

  LoadedCheckpoint out{meta, Model(c, dt, meta.seed)};
  out.model.params().for_each([&](const std::string& name, Tensor& t) {
    std::string line = expect_line(f, "param header");
    std::istringstream is(line);
    std::string got;
    is >> got;
    if (got != name)
      throw DataError("checkpoint: expected parameter '" + name + "', found '" + got + "'");
    std::vector<int64_t> shape;
    int64_t d;
    while (is >> d) shape.push_back(d);
    if (shape != t.shape()) throw DataError("checkpoint: shape mismatch for " + name);
    for (int64_t i = 0; i < t.size(); ++i) {
      float v = read_f32_le(f);
      if (!std::isfinite(v)) throw DataError("checkpoint: non-finite value in " + name);
      t.set(i, static_cast<double>(v));
    }
    std::string sep;
    std::getline(f, sep);
  });
  if (expect_line(f, "end marker") != "end") throw DataError("checkpoint: missing end marker");
  return out;
}

}  // namespace rnng
