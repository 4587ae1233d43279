#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "simt/corpus.hpp"
#include "simt/decoding.hpp"
#include "simt/kvtext.hpp"
#include "simt/model.hpp"
#include "simt/optim.hpp"

namespace simt {

enum class CeMode { consistent, inconsistent, multipath };

CeMode parse_ce_mode(const std::string& name);
std::string to_string(CeMode mode);

struct CeTrainConfig {
  CeMode mode = CeMode::consistent;
  int train_k = 1;                        // inconsistent mode
  std::vector<int> k_set{1, 3, 5, 7, 9};  // multipath mode
  int epochs = 20;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 1;

  void validate() const;
  KeyValues to_kv() const;
  /// Lag used for every batch in consistent/inconsistent mode.
  int fixed_lag(int test_k) const;
};

struct EpochLog {
  int epoch = 0;
  double train_ce = 0.0;  // Stage 1
  double val_ce = 0.0;    // NaN without a validation set
  double mean_risk = 0.0;  // Stage 2
  double mean_cand_bleu = 0.0;
  double mean_cand_al = 0.0;
  long candidates_generated = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::vector<int> batch_lags;  // training lag drawn for each batch, in order
  std::vector<std::string> warnings;
};

/// Token-weighted teacher-forced NLL at wait-k.
double corpus_ce(const Model& model, std::span<const EncodedPair> data, int k);

/// Stage 1: prefix-to-prefix cross-entropy training, in place.
TrainLog train_ce(Model& model, std::span<const EncodedPair> train, int test_k, const CeTrainConfig& config,
                  std::span<const EncodedPair> validation = {});

struct MrtConfig {
  double gamma = 0.4;
  int n = 5;
  DecodeMethod generation = DecodeMethod::top_p;
  double top_p = 0.8;
  int beam_width = 5;
  int max_len = 0;
  int epochs = 5;
  std::size_t batch_size = 16;
  AdamConfig adam;
  std::uint64_t seed = 1;
  /// Exponent on p_g before renormalisation; 1 is the literal objective.
  double sharpness = 1.0;
  /// Add the reference (with its wait-k trace) to every candidate set.
  bool include_reference = false;
  /// Use AL / |x| in the cost instead of AL in tokens.
  bool normalize_al = false;

  void validate() const;
  KeyValues to_kv() const;
  DecodeConfig decode_config(std::uint64_t seed) const;
};

struct CostOptions {
  bool normalize_al = false;
};

/// Latency of a hypothesis: Average Lagging of its latency trace.
double hypothesis_al(const Hypothesis& u, int src_len);

/// gamma * AL + (1 - gamma) * (1 - BLEU(y, u)).
double mrt_cost(std::span<const int> source, std::span<const int> reference, const Hypothesis& u,
                double gamma, const CostOptions& options = {});

/// sum_u cost(u) * softmax(sharpness * log p)(u), evaluated stably.
double expected_cost(std::span<const double> log_probs, std::span<const double> costs, double sharpness = 1.0);

/// Differentiable risk; candidates are rescored on the binding's tape.
ad::Var mrt_risk_graph(ParamBinding& bind, ad::Var memory, std::span<const Hypothesis> candidates,
                       std::span<const double> costs, double sharpness = 1.0);

double mrt_risk(const Model& model, std::span<const int> source, std::span<const int> reference,
                std::span<const Hypothesis> candidates, double gamma, const CostOptions& options = {});

/// Stage 2: minimum-risk fine-tuning with candidates decoded under wait-test_k.
TrainLog finetune_mrt(Model& model, std::span<const EncodedPair> train, int test_k, const MrtConfig& config,
                      std::span<const EncodedPair> validation = {});

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences on `samples` random scalars (all when 0)
/// against the reverse-mode gradient. Relative error uses
/// |a - f| / max(|a|, |f|, floor).
GradientCheckResult check_gradient(const Model& model, const LossClosure& loss, double step,
                                   std::size_t samples, std::uint64_t seed, double floor = 1e-6);

/// check_gradient applied to the MRT risk of a fixed candidate set.
GradientCheckResult gradient_check(const Model& model, std::span<const int> source,
                                   std::span<const int> reference, std::span<const Hypothesis> candidates,
                                   double gamma, double step, std::size_t samples = 0, std::uint64_t seed = 1);

}  // namespace simt
