#include "simt/transformer.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "simt/error.hpp"
#include "simt/policy.hpp"
#include "simt/random.hpp"

namespace simt {

namespace {

constexpr double kNormEps = 1e-6;

void check_ids(std::span<const int> ids, int vocab, const char* what) {
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw ShapeError(std::string(what) + " id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
}

void check_source(const ModelConfig& c, std::span<const int> source) {
  if (source.empty()) throw ShapeError("empty source");
  if (static_cast<int>(source.size()) > c.max_len) {
    throw ShapeError("source length " + std::to_string(source.size()) + " exceeds max_len " +
                     std::to_string(c.max_len));
  }
  check_ids(source, c.src_vocab, "source");
}

void check_decoder_input(const ModelConfig& c, std::span<const int> input) {
  if (input.empty()) throw ShapeError("empty decoder input");
  if (static_cast<int>(input.size()) > c.max_len) {
    throw ShapeError("target length " + std::to_string(input.size()) + " exceeds max_len " +
                     std::to_string(c.max_len));
  }
  check_ids(input, c.tgt_vocab, "target");
}

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<int> causal_limits(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 1);
  return v;
}

ad::Var norm_graph(ParamBinding& b, ad::Var x, const NormSlots& s) {
  return ad::layer_norm(x, b[s.gain], b[s.bias], kNormEps);
}

ad::Var attention_graph(ParamBinding& b, ad::Var query_in, ad::Var kv_in, std::span<const int> limits,
                        const AttentionSlots& s) {
  const int heads = b.config().n_heads;
  const int dh = b.config().head_dim();
  ad::Var q = ad::add_row(ad::matmul(query_in, b[s.wq]), b[s.bq]);
  ad::Var k = ad::add_row(ad::matmul(kv_in, b[s.wk]), b[s.bk]);
  ad::Var v = ad::add_row(ad::matmul(kv_in, b[s.wv]), b[s.bv]);
  std::vector<ad::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * dh, dh);
    ad::Var kh = ad::slice_cols(k, h * dh, dh);
    ad::Var vh = ad::slice_cols(v, h * dh, dh);
    ad::Var p = ad::masked_softmax(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), limits);
    outs.push_back(ad::matmul(p, vh));
  }
  ad::Var joined = heads == 1 ? outs[0] : ad::concat_cols(outs);
  return ad::add_row(ad::matmul(joined, b[s.wo]), b[s.bo]);
}

ad::Var ffn_graph(ParamBinding& b, ad::Var x, const FfnSlots& s) {
  ad::Var hidden = ad::relu(ad::add_row(ad::matmul(x, b[s.w1]), b[s.b1]));
  return ad::add_row(ad::matmul(hidden, b[s.w2]), b[s.b2]);
}

ad::Var maybe_dropout(ad::Var x, const ForwardOptions& opt) {
  if (opt.dropout <= 0.0) return x;
  if (opt.rng == nullptr) throw ConfigError("dropout requires an rng");
  return ad::dropout(x, opt.dropout, *opt.rng);
}

// Plain (tape-free) kernels for the inference path.

Eigen::RowVectorXd norm_row(const Eigen::RowVectorXd& x, const Parameters& p, const NormSlots& s) {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double inv_std = 1.0 / std::sqrt(var + kNormEps);
  return ((x.array() - mean) * inv_std * p[s.gain].row(0).array() + p[s.bias].row(0).array()).matrix();
}

Matrix norm_rows(const Matrix& x, const Parameters& p, const NormSlots& s) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = norm_row(x.row(r), p, s);
  return out;
}

Eigen::RowVectorXd affine_row(const Eigen::RowVectorXd& x, const Matrix& w, const Matrix& b) {
  return x * w + b.row(0);
}

// One query row attending over key/value rows [0, limit).
Eigen::RowVectorXd attend_row(const Eigen::RowVectorXd& q, const Matrix& k, const Matrix& v,
                              Eigen::Index limit, int heads, int dh) {
  Eigen::RowVectorXd out(q.size());
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    const auto kh = k.block(0, h * dh, limit, dh);
    const auto vh = v.block(0, h * dh, limit, dh);
    Eigen::RowVectorXd scores = (q.segment(h * dh, dh) * kh.transpose()) * inv_sqrt;
    const double mx = scores.maxCoeff();
    scores = (scores.array() - mx).exp().matrix();
    scores /= scores.sum();
    out.segment(h * dh, dh) = scores * vh;
  }
  return out;
}

Eigen::RowVectorXd ffn_row(const Eigen::RowVectorXd& x, const Parameters& p, const FfnSlots& s) {
  const Eigen::RowVectorXd hidden = affine_row(x, p[s.w1], p[s.b1]).cwiseMax(0.0);
  return affine_row(hidden, p[s.w2], p[s.b2]);
}

Eigen::VectorXd log_softmax_vec(const Eigen::RowVectorXd& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix().transpose();
}

}  // namespace

ParamBinding::ParamBinding(ad::Tape& tape, const Model& model, const Parameters* values, bool trainable)
    : tape_(&tape),
      model_(&model),
      values_(values ? values : &model.params()),
      trainable_(trainable),
      vars_(values_->size()) {
  if (values_->size() != model.params().size()) throw ShapeError("ParamBinding: layout mismatch");
}

ad::Var ParamBinding::operator[](std::size_t slot) {
  ad::Var& v = vars_.at(slot);
  if (!v.valid()) v = trainable_ ? tape_->leaf((*values_)[slot]) : tape_->constant((*values_)[slot]);
  return v;
}

Gradients ParamBinding::gradients() const {
  Gradients g = zeros_like(*values_);
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (!vars_[i].valid()) continue;
    if (const Matrix* gm = tape_->grad_if_any(vars_[i].index())) g[i] = *gm;
  }
  return g;
}

ad::Var encode_graph(ParamBinding& b, std::span<const int> source, const ForwardOptions& opt) {
  check_source(b.config(), source);
  const auto& L = b.layout();
  const auto positions = iota_ids(source.size());
  const auto limits = causal_limits(source.size());
  ad::Var h = ad::add(ad::gather_rows(b[L.src_embed], source), ad::gather_rows(b[L.src_pos], positions));
  h = maybe_dropout(h, opt);
  for (const auto& layer : L.encoder) {
    ad::Var a = norm_graph(b, h, layer.ln_attn);
    h = ad::add(h, maybe_dropout(attention_graph(b, a, a, limits, layer.self_attn), opt));
    ad::Var f = norm_graph(b, h, layer.ln_ffn);
    h = ad::add(h, maybe_dropout(ffn_graph(b, f, layer.ffn), opt));
  }
  return norm_graph(b, h, L.enc_norm);
}

ad::Var decode_graph(ParamBinding& b, ad::Var memory, std::span<const int> decoder_input,
                     std::span<const int> cross_limits, const ForwardOptions& opt) {
  check_decoder_input(b.config(), decoder_input);
  if (cross_limits.size() != decoder_input.size()) {
    throw ShapeError("decode_graph: one cross-attention limit per decoder position required");
  }
  for (int lim : cross_limits) {
    if (lim < 1 || lim > memory.rows()) throw ShapeError("decode_graph: cross limit out of range");
  }
  const auto& L = b.layout();
  const auto positions = iota_ids(decoder_input.size());
  const auto limits = causal_limits(decoder_input.size());
  ad::Var h =
      ad::add(ad::gather_rows(b[L.tgt_embed], decoder_input), ad::gather_rows(b[L.tgt_pos], positions));
  h = maybe_dropout(h, opt);
  for (const auto& layer : L.decoder) {
    ad::Var a = norm_graph(b, h, layer.ln_self);
    h = ad::add(h, maybe_dropout(attention_graph(b, a, a, limits, layer.self_attn), opt));
    ad::Var c = norm_graph(b, h, layer.ln_cross);
    h = ad::add(h, maybe_dropout(attention_graph(b, c, memory, cross_limits, layer.cross_attn), opt));
    ad::Var f = norm_graph(b, h, layer.ln_ffn);
    h = ad::add(h, maybe_dropout(ffn_graph(b, f, layer.ffn), opt));
  }
  ad::Var out = norm_graph(b, h, L.dec_norm);
  ad::Var logits = ad::add_row(ad::matmul_nt(out, b[L.out_weight]), b[L.out_bias]);
  return ad::log_softmax(logits);
}

ad::Var step_log_probs_graph(ParamBinding& b, ad::Var memory, std::span<const int> tokens,
                             std::span<const int> g_trace, const ForwardOptions& opt) {
  if (tokens.size() != g_trace.size()) {
    throw ShapeError("sequence length " + std::to_string(tokens.size()) + " != trace length " +
                     std::to_string(g_trace.size()));
  }
  if (tokens.empty()) throw ShapeError("cannot score an empty sequence");
  require_valid_g_trace(g_trace, static_cast<int>(memory.rows()));
  check_ids(tokens, b.config().tgt_vocab, "target");
  std::vector<int> input;
  input.reserve(tokens.size());
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), tokens.begin(), tokens.end() - 1);
  ad::Var logp = decode_graph(b, memory, input, g_trace, opt);
  std::vector<std::pair<int, int>> coords;
  coords.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) coords.emplace_back(static_cast<int>(i), tokens[i]);
  return ad::pick(logp, coords);
}

SequenceScore sequence_log_prob(const Model& model, std::span<const int> source,
                                std::span<const int> tokens, std::span<const int> g_trace) {
  ad::Tape tape;
  ParamBinding b(tape, model, nullptr, false);
  ad::Var memory = encode_graph(b, source);
  ad::Var steps = step_log_probs_graph(b, memory, tokens, g_trace);
  SequenceScore s;
  s.steps.assign(steps.value().data(), steps.value().data() + steps.value().size());
  for (double v : s.steps) s.total += v;
  return s;
}

Matrix teacher_forced_probs(const Model& model, std::span<const int> source,
                            std::span<const int> decoder_input, std::span<const int> g_trace) {
  ad::Tape tape;
  ParamBinding b(tape, model, nullptr, false);
  ad::Var memory = encode_graph(b, source);
  std::vector<int> limits(g_trace.begin(), g_trace.end());
  if (limits.empty()) limits.assign(decoder_input.size(), static_cast<int>(source.size()));
  return decode_graph(b, memory, decoder_input, limits).value().array().exp().matrix();
}

Matrix encoder_states(const Model& model, std::span<const int> source) {
  const auto& c = model.config();
  check_source(c, source);
  const auto& p = model.params();
  const auto& L = model.layout();
  const auto n = static_cast<Eigen::Index>(source.size());
  Matrix h(n, c.d_model);
  for (Eigen::Index j = 0; j < n; ++j) {
    h.row(j) = p[L.src_embed].row(source[static_cast<std::size_t>(j)]) + p[L.src_pos].row(j);
  }
  for (const auto& layer : L.encoder) {
    const Matrix a = norm_rows(h, p, layer.ln_attn);
    const auto& s = layer.self_attn;
    Matrix q = a * p[s.wq];
    q.rowwise() += p[s.bq].row(0);
    Matrix k = a * p[s.wk];
    k.rowwise() += p[s.bk].row(0);
    Matrix v = a * p[s.wv];
    v.rowwise() += p[s.bv].row(0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::RowVectorXd o = attend_row(q.row(j), k, v, j + 1, c.n_heads, c.head_dim());
      h.row(j) += affine_row(o, p[s.wo], p[s.bo]);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      h.row(j) += ffn_row(norm_row(h.row(j), p, layer.ln_ffn), p, layer.ffn);
    }
  }
  return norm_rows(h, p, L.enc_norm);
}

IncrementalDecoder::IncrementalDecoder(const Model& model, std::span<const int> source)
    : model_(&model), memory_(encoder_states(model, source)) {
  const auto& p = model.params();
  for (const auto& layer : model.layout().decoder) {
    const auto& s = layer.cross_attn;
    Matrix k = memory_ * p[s.wk];
    k.rowwise() += p[s.bk].row(0);
    Matrix v = memory_ * p[s.wv];
    v.rowwise() += p[s.bv].row(0);
    cross_k_.push_back(std::move(k));
    cross_v_.push_back(std::move(v));
  }
}

IncrementalDecoder::State IncrementalDecoder::start() const {
  const auto& c = model_->config();
  State s;
  for (int l = 0; l < c.n_dec_layers; ++l) {
    s.self_k.emplace_back(c.max_len, c.d_model);
    s.self_v.emplace_back(c.max_len, c.d_model);
  }
  return s;
}

Eigen::VectorXd IncrementalDecoder::step(State& state, int token, int g) const {
  const auto& c = model_->config();
  const auto& p = model_->params();
  const auto& L = model_->layout();
  if (state.position >= c.max_len) {
    throw ShapeError("decoder position " + std::to_string(state.position) + " exceeds max_len " +
                     std::to_string(c.max_len));
  }
  if (token < 0 || token >= c.tgt_vocab) throw ShapeError("target id out of vocabulary");
  if (g < 1 || g > source_length()) {
    throw ShapeError("g = " + std::to_string(g) + " outside [1, " + std::to_string(source_length()) + "]");
  }
  const Eigen::Index pos = state.position;
  Eigen::RowVectorXd h = p[L.tgt_embed].row(token) + p[L.tgt_pos].row(pos);
  for (std::size_t l = 0; l < L.decoder.size(); ++l) {
    const auto& layer = L.decoder[l];
    {
      const auto& s = layer.self_attn;
      const Eigen::RowVectorXd a = norm_row(h, p, layer.ln_self);
      state.self_k[l].row(pos) = affine_row(a, p[s.wk], p[s.bk]);
      state.self_v[l].row(pos) = affine_row(a, p[s.wv], p[s.bv]);
      const Eigen::RowVectorXd o = attend_row(affine_row(a, p[s.wq], p[s.bq]), state.self_k[l],
                                              state.self_v[l], pos + 1, c.n_heads, c.head_dim());
      h += affine_row(o, p[s.wo], p[s.bo]);
    }
    {
      const auto& s = layer.cross_attn;
      const Eigen::RowVectorXd a = norm_row(h, p, layer.ln_cross);
      const Eigen::RowVectorXd o =
          attend_row(affine_row(a, p[s.wq], p[s.bq]), cross_k_[l], cross_v_[l], g, c.n_heads, c.head_dim());
      h += affine_row(o, p[s.wo], p[s.bo]);
    }
    h += ffn_row(norm_row(h, p, layer.ln_ffn), p, layer.ffn);
  }
  const Eigen::RowVectorXd out = norm_row(h, p, L.dec_norm);
  const Eigen::RowVectorXd logits = out * p[L.out_weight].transpose() + p[L.out_bias].row(0);
  ++state.position;
  return log_softmax_vec(logits);
}

Eigen::VectorXd next_token_distribution(const Model& model, std::span<const int> source, int g,
                                        std::span<const int> prefix, std::span<const int> prefix_trace) {
  check_source(model.config(), source);
  const int n = static_cast<int>(source.size());
  if (g < 1 || g > n) {
    throw ShapeError("g = " + std::to_string(g) + " outside [1, " + std::to_string(n) + "]");
  }
  if (prefix.empty() || prefix[0] != Vocabulary::kBos) {
    throw ShapeError("target prefix must begin with bos");
  }
  if (!prefix_trace.empty() && prefix_trace.size() + 1 != prefix.size()) {
    throw ShapeError("prefix trace must cover every prefix position but the last");
  }
  IncrementalDecoder dec(model, source);
  auto state = dec.start();
  Eigen::VectorXd logp;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const bool last = i + 1 == prefix.size();
    const int gi = (last || prefix_trace.empty()) ? g : prefix_trace[i];
    logp = dec.step(state, prefix[i], gi);
  }
  return logp.array().exp().matrix();
}

ad::Var ce_prefix_loss_graph(ParamBinding& b, const Batch& batch, std::span<const int> k_assignment,
                             const ForwardOptions& opt) {
  if (k_assignment.size() != batch.size()) throw ShapeError("one training lag per sentence required");
  std::vector<ad::Var> sentence_sums;
  int tokens = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const int k = k_assignment[s];
    if (k < 1) throw ConfigError("training lag must be >= 1");
    const int src_len = batch.source_lengths[s];
    const int steps = batch.target_lengths[s];
    const std::span<const int> src(batch.source[s].data(), static_cast<std::size_t>(src_len));
    const auto& tgt = batch.target[s];
    ad::Var memory = encode_graph(b, src, opt);
    const std::span<const int> predicted(tgt.data() + 1, static_cast<std::size_t>(steps));
    const GTrace g = make_g_trace(PolicySpec{k}, src_len, steps);
    sentence_sums.push_back(ad::sum(step_log_probs_graph(b, memory, predicted, g, opt)));
    tokens += steps;
  }
  return ad::scale(ad::sum(sentence_sums), -1.0 / tokens);
}

double ce_prefix_loss(const Model& model, const Batch& batch, std::span<const int> k_assignment) {
  ad::Tape tape;
  ParamBinding b(tape, model, nullptr, false);
  return ce_prefix_loss_graph(b, batch, k_assignment).scalar();
}

double sentence_ce(const Model& model, const EncodedPair& pair, int k) {
  std::vector<int> tokens = pair.target;
  tokens.push_back(Vocabulary::kEos);
  const GTrace g = make_g_trace(PolicySpec::wait_k(k), static_cast<int>(pair.source.size()),
                                static_cast<int>(tokens.size()));
  return -sequence_log_prob(model, pair.source, tokens, g).total / static_cast<double>(tokens.size());
}

}  // namespace simt
