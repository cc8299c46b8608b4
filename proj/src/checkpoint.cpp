#include <json.hpp>

#include <cstring>
#include <fstream>

#include "knlab/model.hpp"

namespace knlab {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'K', 'N', 'L', 'B'};

struct Fnv1a {
  uint64_t h = 1469598103934665603ULL;
  void feed(const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
};

struct Writer {
  std::ofstream out;
  Fnv1a sum;

  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw io_error("checkpoint: cannot open " + path + " for writing");
  }
  void bytes(const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    sum.feed(p, n);
  }
  void u32(uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64_raw(uint64_t v) {  // not checksummed; used for the trailer itself
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    bytes(b, 8);
  }
};

struct Reader {
  std::ifstream in;
  Fnv1a sum;

  explicit Reader(const std::string& path) : in(path, std::ios::binary) {
    if (!in) throw io_error("checkpoint: cannot open " + path);
  }
  void bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) throw io_error("checkpoint: truncated file");
    sum.feed(p, n);
  }
  uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  uint64_t u64_raw() {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw io_error("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    unsigned char b[8];
    bytes(b, 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

json config_to_json(const ModelConfig& c) {
  return json{{"layers", c.layers},       {"d_model", c.d_model},
              {"d_mlp", c.d_mlp},         {"heads", c.heads},
              {"vocab", c.vocab},         {"max_seq", c.max_seq},
              {"masking", c.masking},     {"nonlinearity", c.nonlinearity},
              {"mask_token", c.mask_token}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.layers = j.at("layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_mlp = j.at("d_mlp").get<int>();
    c.heads = j.at("heads").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.masking = j.at("masking").get<std::string>();
    c.nonlinearity = j.at("nonlinearity").get<std::string>();
    c.mask_token = j.at("mask_token").get<int>();
  } catch (const json::exception& e) {
    throw data_error(std::string("checkpoint: bad config block: ") + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const Transformer& model, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string cfg = config_to_json(model.config()).dump();
  w.u32(static_cast<uint32_t>(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  w.u32(static_cast<uint32_t>(model.params().size()));
  for (const auto& [name, a] : model.params()) {
    w.u32(static_cast<uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<uint32_t>(a.shape().size()));
    for (int d : a.shape()) w.u32(static_cast<uint32_t>(d));
    for (int64_t i = 0; i < a.size(); ++i) w.f64(a[i]);
  }
  w.u64_raw(w.sum.h);
  w.out.flush();
  if (!w.out) throw io_error("checkpoint: write failed for " + path);
}

Transformer load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw io_error("checkpoint: bad magic bytes (not a model checkpoint)");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw io_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t cfg_len = r.u32();
  if (cfg_len > (1u << 20)) throw io_error("checkpoint: implausible config length");
  std::string cfg_str(cfg_len, '\0');
  r.bytes(cfg_str.data(), cfg_len);
  json cfg_json;
  try {
    cfg_json = json::parse(cfg_str);
  } catch (const json::exception& e) {
    throw data_error(std::string("checkpoint: config is not valid JSON: ") + e.what());
  }
  const ModelConfig cfg = config_from_json(cfg_json);

  const uint32_t count = r.u32();
  std::map<std::string, Array> params;
  for (uint32_t k = 0; k < count; ++k) {
    const uint32_t name_len = r.u32();
    if (name_len > (1u << 12)) throw io_error("checkpoint: implausible record name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint32_t ndim = r.u32();
    if (ndim > 8) throw io_error("checkpoint: implausible rank for " + name);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    Array a(shape);
    for (int64_t i = 0; i < a.size(); ++i) a[i] = r.f64();
    if (!params.emplace(name, std::move(a)).second)
      throw data_error("checkpoint: duplicate record " + name);
  }
  const uint64_t want = r.sum.h;
  const uint64_t got = r.u64_raw();
  if (want != got) throw io_error("checkpoint: checksum mismatch (file is corrupt)");
  return Transformer(cfg, std::move(params));
}

}  // namespace knlab
