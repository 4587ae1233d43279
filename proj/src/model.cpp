#include "simt/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "simt/error.hpp"
#include "simt/random.hpp"

namespace simt {

namespace {

constexpr std::string_view kMagic = "SIMTCKPT1";

int parse_int_field(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("model config lacks field '" + key + "'");
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("model config field '" + key + "' is not an integer: " + it->second);
  }
}

double parse_real_field(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("model config lacks field '" + key + "'");
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("model config field '" + key + "' is not a number: " + it->second);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1) throw ConfigError("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (d_ffn < 1) throw ConfigError("d_ffn must be positive");
  if (n_enc_layers < 1 || n_dec_layers < 1) throw ConfigError("layer counts must be >= 1");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  if (src_vocab < 5 || tgt_vocab < 5) {
    throw ConfigError("vocabularies need the 4 reserved ids plus at least one token");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
}

KeyValues ModelConfig::to_kv() const {
  return {
      {"d_ffn", std::to_string(d_ffn)},
      {"d_model", std::to_string(d_model)},
      {"dropout", format_real(dropout)},
      {"max_len", std::to_string(max_len)},
      {"n_dec_layers", std::to_string(n_dec_layers)},
      {"n_enc_layers", std::to_string(n_enc_layers)},
      {"n_heads", std::to_string(n_heads)},
      {"src_vocab", std::to_string(src_vocab)},
      {"tgt_vocab", std::to_string(tgt_vocab)},
  };
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig c;
  c.d_model = parse_int_field(kv, "d_model");
  c.n_heads = parse_int_field(kv, "n_heads");
  c.d_ffn = parse_int_field(kv, "d_ffn");
  c.n_enc_layers = parse_int_field(kv, "n_enc_layers");
  c.n_dec_layers = parse_int_field(kv, "n_dec_layers");
  c.max_len = parse_int_field(kv, "max_len");
  c.src_vocab = parse_int_field(kv, "src_vocab");
  c.tgt_vocab = parse_int_field(kv, "tgt_vocab");
  c.dropout = parse_real_field(kv, "dropout");
  return c;
}

std::size_t Parameters::add(std::string name, Matrix value) {
  if (index_.count(name)) throw ShapeError("duplicate parameter name " + name);
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t Parameters::index(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ShapeError("unknown parameter " + std::string(name));
  return it->second;
}

bool Parameters::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

bool Parameters::all_finite() const {
  for (const auto& v : values_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

bool bitwise_equal(const Parameters& a, const Parameters& b) {
  if (a.names_ != b.names_) return false;
  for (std::size_t i = 0; i < a.values_.size(); ++i) {
    const auto& x = a.values_[i];
    const auto& y = b.values_[i];
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0)
      return false;
  }
  return true;
}

Gradients zeros_like(const Parameters& params) {
  Gradients g;
  g.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    g.push_back(Matrix::Zero(params[i].rows(), params[i].cols()));
  }
  return g;
}

Parameters parameter_skeleton(const ModelConfig& c) {
  c.validate();
  Parameters p;
  const int d = c.d_model;
  auto mat = [&](const std::string& name, int rows, int cols) { p.add(name, Matrix::Zero(rows, cols)); };
  auto attention = [&](const std::string& prefix) {
    for (const char* w : {"q", "k", "v", "o"}) {
      mat(prefix + ".w" + w, d, d);
      mat(prefix + ".b" + w, 1, d);
    }
  };
  auto norm = [&](const std::string& prefix) {
    mat(prefix + ".gain", 1, d);
    mat(prefix + ".bias", 1, d);
  };
  auto ffn = [&](const std::string& prefix) {
    mat(prefix + ".w1", d, c.d_ffn);
    mat(prefix + ".b1", 1, c.d_ffn);
    mat(prefix + ".w2", c.d_ffn, d);
    mat(prefix + ".b2", 1, d);
  };

  mat("src_embed", c.src_vocab, d);
  mat("src_pos", c.max_len, d);
  mat("tgt_embed", c.tgt_vocab, d);
  mat("tgt_pos", c.max_len, d);
  for (int l = 0; l < c.n_enc_layers; ++l) {
    const auto pre = "enc." + std::to_string(l);
    norm(pre + ".ln_attn");
    attention(pre + ".self");
    norm(pre + ".ln_ffn");
    ffn(pre + ".ffn");
  }
  norm("enc.norm");
  for (int l = 0; l < c.n_dec_layers; ++l) {
    const auto pre = "dec." + std::to_string(l);
    norm(pre + ".ln_self");
    attention(pre + ".self");
    norm(pre + ".ln_cross");
    attention(pre + ".cross");
    norm(pre + ".ln_ffn");
    ffn(pre + ".ffn");
  }
  norm("dec.norm");
  mat("out.weight", c.tgt_vocab, d);
  mat("out.bias", 1, c.tgt_vocab);
  return p;
}

ModelLayout ModelLayout::resolve(const Parameters& p, const ModelConfig& c) {
  auto attention = [&](const std::string& pre) {
    return AttentionSlots{p.index(pre + ".wq"), p.index(pre + ".bq"), p.index(pre + ".wk"),
                          p.index(pre + ".bk"), p.index(pre + ".wv"), p.index(pre + ".bv"),
                          p.index(pre + ".wo"), p.index(pre + ".bo")};
  };
  auto norm = [&](const std::string& pre) {
    return NormSlots{p.index(pre + ".gain"), p.index(pre + ".bias")};
  };
  auto ffn = [&](const std::string& pre) {
    return FfnSlots{p.index(pre + ".w1"), p.index(pre + ".b1"), p.index(pre + ".w2"),
                    p.index(pre + ".b2")};
  };
  ModelLayout L;
  L.src_embed = p.index("src_embed");
  L.src_pos = p.index("src_pos");
  L.tgt_embed = p.index("tgt_embed");
  L.tgt_pos = p.index("tgt_pos");
  for (int l = 0; l < c.n_enc_layers; ++l) {
    const auto pre = "enc." + std::to_string(l);
    L.encoder.push_back({norm(pre + ".ln_attn"), attention(pre + ".self"), norm(pre + ".ln_ffn"),
                         ffn(pre + ".ffn")});
  }
  L.enc_norm = norm("enc.norm");
  for (int l = 0; l < c.n_dec_layers; ++l) {
    const auto pre = "dec." + std::to_string(l);
    L.decoder.push_back({norm(pre + ".ln_self"), attention(pre + ".self"), norm(pre + ".ln_cross"),
                         attention(pre + ".cross"), norm(pre + ".ln_ffn"), ffn(pre + ".ffn")});
  }
  L.dec_norm = norm("dec.norm");
  L.out_weight = p.index("out.weight");
  L.out_bias = p.index("out.bias");
  return L;
}

Model::Model(ModelConfig config, Parameters params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const Parameters skeleton = parameter_skeleton(config_);
  if (skeleton.size() != params_.size()) {
    throw ShapeError("parameter count " + std::to_string(params_.size()) + " != expected " +
                     std::to_string(skeleton.size()));
  }
  for (std::size_t i = 0; i < skeleton.size(); ++i) {
    if (skeleton.name(i) != params_.name(i) || skeleton[i].rows() != params_[i].rows() ||
        skeleton[i].cols() != params_[i].cols()) {
      throw ShapeError("parameter " + params_.name(i) + " does not match the config layout");
    }
  }
  layout_ = ModelLayout::resolve(params_, config_);
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  Parameters p = parameter_skeleton(config);
  Rng rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p.name(i);
    Matrix& m = p[i];
    const bool is_gain = name.size() > 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
    if (is_gain) {
      m.setOnes();
    } else if (m.rows() > 1) {
      const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-a, a);
    }
  }
  return Model(config, std::move(p));
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view take(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw CorruptionError(std::string("checkpoint truncated while reading ") + what);
    }
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    const auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  double f64() {
    const auto s = take(8, "tensor values");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return std::bit_cast<double>(v);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  std::string out(kMagic);
  const std::string cfg = to_kv_text(model.config().to_kv());
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const auto& p = model.params();
  put_u32(out, static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(p.name(i).size()));
    out += p.name(i);
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(p[i].rows()));
    put_u32(out, static_cast<std::uint32_t>(p[i].cols()));
    for (Eigen::Index r = 0; r < p[i].rows(); ++r)
      for (Eigen::Index c = 0; c < p[i].cols(); ++c) put_f64(out, p[i](r, c));
  }
  return out;
}

Model deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < kMagic.size() || in.take(kMagic.size(), "magic") != kMagic) {
    throw CorruptionError("bad checkpoint magic (expected SIMTCKPT1)");
  }
  const auto cfg_len = in.u32("config length");
  ModelConfig config;
  try {
    config = ModelConfig::from_kv(parse_kv_text(in.take(cfg_len, "config block")));
    config.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("checkpoint config block invalid: ") + e.what());
  }
  Parameters expected = parameter_skeleton(config);
  const auto count = in.u32("tensor count");
  if (count != expected.size()) {
    throw CorruptionError("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(expected.size()));
  }
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = in.u32("tensor name length");
    const std::string name(in.take(name_len, "tensor name"));
    if (name != expected.name(t)) {
      throw CorruptionError("tensor " + std::to_string(t) + " is '" + name + "', expected '" +
                            expected.name(t) + "'");
    }
    const auto rank = in.u32("tensor rank");
    if (rank < 1 || rank > 2) throw CorruptionError("tensor " + name + " has unsupported rank");
    std::uint32_t rows = 1, cols = 0;
    if (rank == 1) {
      cols = in.u32("tensor dims");
    } else {
      rows = in.u32("tensor dims");
      cols = in.u32("tensor dims");
    }
    Matrix& m = expected[t];
    if (rows != m.rows() || cols != m.cols()) {
      throw CorruptionError("tensor " + name + " has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", config implies " + std::to_string(m.rows()) +
                            "x" + std::to_string(m.cols()));
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in.f64();
  }
  if (!in.done()) throw CorruptionError("trailing bytes after checkpoint tensors");
  if (!expected.all_finite()) throw CorruptionError("checkpoint contains non-finite values");
  return Model(config, std::move(expected));
}

void save_checkpoint(const Model& model, const std::string& path) {
  write_text_file(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

Model load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Model m = load_checkpoint(path);
  const auto have = m.config().to_kv();
  const auto want = expected.to_kv();
  for (const auto& [key, value] : want) {
    const auto it = have.find(key);
    if (it == have.end() || it->second != value) {
      throw ConfigError("checkpoint config mismatch in field '" + key + "': file has " +
                        (it == have.end() ? std::string("nothing") : it->second) + ", expected " +
                        value);
    }
  }
  return m;
}

}  // namespace simt
