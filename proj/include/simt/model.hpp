#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "simt/kvtext.hpp"

namespace simt {

using Matrix = Eigen::MatrixXd;

struct ModelConfig {
  int d_model = 32;
  int n_heads = 2;
  int d_ffn = 64;
  int n_enc_layers = 1;
  int n_dec_layers = 1;
  int max_len = 40;
  int src_vocab = 0;
  int tgt_vocab = 0;
  double dropout = 0.0;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }

  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Ordered named tensors. Every tensor is stored as a matrix; biases and
/// layer-norm parameters are 1 x n rows.
class Parameters {
 public:
  std::size_t add(std::string name, Matrix value);

  std::size_t size() const { return values_.size(); }
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t i) const { return names_[i]; }

  Matrix& operator[](std::size_t i) { return values_[i]; }
  const Matrix& operator[](std::size_t i) const { return values_[i]; }

  /// Total number of scalars.
  std::size_t scalar_count() const;
  bool all_finite() const;

  /// Same names, shapes and bit patterns.
  friend bool bitwise_equal(const Parameters& a, const Parameters& b);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradients aligned index-for-index with a Parameters object.
using Gradients = std::vector<Matrix>;

Gradients zeros_like(const Parameters& params);

struct AttentionSlots {
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
};
struct NormSlots {
  std::size_t gain, bias;
};
struct FfnSlots {
  std::size_t w1, b1, w2, b2;
};
struct EncoderLayerSlots {
  NormSlots ln_attn;
  AttentionSlots self_attn;
  NormSlots ln_ffn;
  FfnSlots ffn;
};
struct DecoderLayerSlots {
  NormSlots ln_self;
  AttentionSlots self_attn;
  NormSlots ln_cross;
  AttentionSlots cross_attn;
  NormSlots ln_ffn;
  FfnSlots ffn;
};

/// Parameter indices of each component, resolved by name.
struct ModelLayout {
  std::size_t src_embed, tgt_embed, src_pos, tgt_pos;
  std::vector<EncoderLayerSlots> encoder;
  NormSlots enc_norm;
  std::vector<DecoderLayerSlots> decoder;
  NormSlots dec_norm;
  std::size_t out_weight, out_bias;

  static ModelLayout resolve(const Parameters& params, const ModelConfig& config);
};

/// Pre-norm Transformer encoder-decoder with a causal (unidirectional)
/// encoder.
class Model {
 public:
  Model(ModelConfig config, Parameters params);

  const ModelConfig& config() const { return config_; }
  const Parameters& params() const { return params_; }
  Parameters& params() { return params_; }
  const ModelLayout& layout() const { return layout_; }

 private:
  ModelConfig config_;
  Parameters params_;
  ModelLayout layout_;
};

/// Names and shapes for `config`, values zero. Checkpoint loading validates
/// against this.
Parameters parameter_skeleton(const ModelConfig& config);

/// Weights ~ U(-a, a), a = sqrt(6 / (rows + cols)); biases zero; layer-norm
/// gains one.
Model init_model(const ModelConfig& config, std::uint64_t seed);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
/// Also requires the stored config to equal `expected`; the error names the
/// first differing field.
Model load_checkpoint(const std::string& path, const ModelConfig& expected);

std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::string_view bytes);

}  // namespace simt
