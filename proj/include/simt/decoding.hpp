#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simt/corpus.hpp"
#include "simt/model.hpp"
#include "simt/policy.hpp"

namespace simt {

class Rng;

/// A decoded target sequence with its read trace and per-step scores. The
/// tokens include the terminating eos when one was produced.
struct Hypothesis {
  std::vector<int> tokens;
  GTrace g_trace;
  std::vector<double> step_log_probs;
  double total_log_prob = 0.0;

  bool finished() const;
  /// Tokens without the terminating eos.
  std::vector<int> content() const;
  /// Trace over the content tokens. An eos-only hypothesis keeps its single
  /// eos step, so the latency view is never empty.
  GTrace latency_trace() const;
  double normalized_score() const;
};

enum class DecodeMethod { greedy, beam, top_p };

struct DecodeConfig {
  DecodeMethod method = DecodeMethod::top_p;
  int n = 5;
  int beam_width = 5;
  double top_p = 0.8;
  /// 0 selects min(model max_len, 2|x| + 2).
  int max_len = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

DecodeMethod parse_decode_method(const std::string& name);
std::string to_string(DecodeMethod method);

/// Decoding never emits pad or bos.
bool is_emittable(int token);

int resolve_max_len(const Model& model, std::span<const int> source, int requested);

Hypothesis greedy_decode(const Model& model, const PolicySpec& policy, std::span<const int> source,
                         int max_len = 0);

/// Length-normalised beam search. Returns up to n distinct hypotheses sorted
/// by total_log_prob / |u|.
std::vector<Hypothesis> beam_decode(const Model& model, const PolicySpec& policy,
                                    std::span<const int> source, const DecodeConfig& config);

/// n nucleus-sampling rollouts, de-duplicated, sorted like beam_decode.
std::vector<Hypothesis> sample_decode(const Model& model, const PolicySpec& policy,
                                      std::span<const int> source, const DecodeConfig& config);

/// Dispatches on config.method (greedy yields a single candidate).
std::vector<Hypothesis> generate_candidates(const Model& model, const PolicySpec& policy,
                                            std::span<const int> source, const DecodeConfig& config);

/// Forces the first |gold_prefix| steps, then continues greedily.
Hypothesis prefix_constrained_decode(const Model& model, const PolicySpec& policy,
                                     std::span<const int> source, std::span<const int> gold_prefix,
                                     int max_len = 0);

/// Whether the greedy choice after the gold prefix reference[0..position-1]
/// equals reference[position - 1] (1-based position).
bool teacher_forced_correct(const Model& model, const PolicySpec& policy, std::span<const int> source,
                            std::span<const int> reference, int position);

/// Indices of the nucleus: the smallest probability-sorted prefix whose mass
/// reaches top_p. Ties keep the lower id first.
std::vector<int> nucleus(const Eigen::VectorXd& probs, double top_p);
int sample_from_nucleus(const Eigen::VectorXd& probs, double top_p, Rng& rng);

/// Hypothesis file line: content tokens, latency trace and total log-prob,
/// tab separated.
std::string format_hypothesis_line(const Hypothesis& h, const Vocabulary& tgt_vocab);

struct HypothesisRecord {
  Sentence tokens;
  GTrace g_trace;
  double total_log_prob = 0.0;
};

HypothesisRecord parse_hypothesis_line(const std::string& line);
std::vector<HypothesisRecord> read_hypothesis_file(const std::string& path);

}  // namespace simt
