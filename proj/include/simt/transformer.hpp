#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include "simt/autodiff.hpp"
#include "simt/corpus.hpp"
#include "simt/model.hpp"

namespace simt {

class Rng;

/// Exposes a model's parameters as tape leaves, created on first use.
/// `values` overrides the model's own parameters (same layout), which is how
/// finite differences evaluate perturbed copies.
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, const Model& model, const Parameters* values = nullptr,
               bool trainable = true);

  ad::Tape& tape() { return *tape_; }
  const ModelConfig& config() const { return model_->config(); }
  const ModelLayout& layout() const { return model_->layout(); }

  ad::Var operator[](std::size_t slot);

  /// Gradients after tape.backward(); parameters never touched get zeros.
  Gradients gradients() const;

 private:
  ad::Tape* tape_;
  const Model* model_;
  const Parameters* values_;
  bool trainable_;
  std::vector<ad::Var> vars_;
};

struct ForwardOptions {
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when dropout > 0
};

/// Encoder states (|x| x d). Self-attention is causal, so row j is a function
/// of x[0..j] only.
ad::Var encode_graph(ParamBinding& bind, std::span<const int> source, const ForwardOptions& opt = {});

/// Next-token log-probabilities (|input| x V) for decoder inputs
/// [bos, u1, ..., u_{m-1}]. Row i cross-attends to memory rows
/// [0, cross_limits[i]).
ad::Var decode_graph(ParamBinding& bind, ad::Var memory, std::span<const int> decoder_input,
                     std::span<const int> cross_limits, const ForwardOptions& opt = {});

/// Column of log p(u_i | x_{<=g(i)}, u_{<i}) for every step, differentiable.
ad::Var step_log_probs_graph(ParamBinding& bind, ad::Var memory, std::span<const int> tokens,
                             std::span<const int> g_trace, const ForwardOptions& opt = {});

struct SequenceScore {
  double total = 0.0;
  std::vector<double> steps;
};

/// Teacher-forced scoring of `tokens` under the read trace `g_trace`.
SequenceScore sequence_log_prob(const Model& model, std::span<const int> source,
                                std::span<const int> tokens, std::span<const int> g_trace);

/// Teacher-forced next-token distributions (one row per step), graph path.
/// An empty trace means unrestricted cross-attention.
Matrix teacher_forced_probs(const Model& model, std::span<const int> source,
                            std::span<const int> decoder_input, std::span<const int> g_trace);

/// Encoder states from the inference path.
Matrix encoder_states(const Model& model, std::span<const int> source);

/// Autoregressive decoder with key/value caches. The source is encoded once;
/// causality of the encoder makes this equivalent to re-encoding each revealed
/// prefix.
class IncrementalDecoder {
 public:
  struct State {
    int position = 0;
    std::vector<Matrix> self_k;  // per layer, max_len x d, rows [0, position) filled
    std::vector<Matrix> self_v;
  };

  IncrementalDecoder(const Model& model, std::span<const int> source);

  State start() const;
  /// Feeds `token` at the next decoder position, cross-attending to the first
  /// `g` source tokens, and returns log-probabilities of the following token.
  Eigen::VectorXd step(State& state, int token, int g) const;

  int source_length() const { return static_cast<int>(memory_.rows()); }
  const Model& model() const { return *model_; }

 private:
  const Model* model_;
  Matrix memory_;
  std::vector<Matrix> cross_k_, cross_v_;
};

/// p(. | x_{<=g}, prefix) where prefix = [bos, u1, ..., u_{i-1}]. Earlier
/// prefix positions read `prefix_trace[j]` source tokens when given, else g.
Eigen::VectorXd next_token_distribution(const Model& model, std::span<const int> source, int g,
                                        std::span<const int> prefix,
                                        std::span<const int> prefix_trace = {});

/// Mean per-token negative log-likelihood of a padded batch under
/// per-sentence training lags (g(i) = min(k' + i - 1, |x|)).
ad::Var ce_prefix_loss_graph(ParamBinding& bind, const Batch& batch,
                             std::span<const int> k_assignment, const ForwardOptions& opt = {});
double ce_prefix_loss(const Model& model, const Batch& batch, std::span<const int> k_assignment);

/// Per-sentence mean token NLL at lag k (eos included).
double sentence_ce(const Model& model, const EncodedPair& pair, int k);

}  // namespace simt
