#pragma once

#include <span>
#include <utility>
#include <vector>

namespace simt {

struct BleuConfig {
  int max_order = 4;
  /// Add-one on numerator and denominator of orders >= 2, applied only when
  /// some order has a zero match or candidate count.
  bool smooth = true;
};

/// Clipped n-gram statistics of one hypothesis against one reference.
struct BleuStats {
  std::vector<long> matches;     // per order, index 0 = unigrams
  std::vector<long> candidates;  // hypothesis n-gram totals per order
  long hyp_len = 0;
  long ref_len = 0;

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats bleu_stats(std::span<const int> reference, std::span<const int> hypothesis,
                     int max_order);

/// Smoothed sentence BLEU in [0, 1]. Empty hypothesis scores 0.
double sentence_bleu(std::span<const int> reference, std::span<const int> hypothesis,
                     const BleuConfig& config = {});

using BleuPair = std::pair<std::vector<int>, std::vector<int>>;  // (reference, hypothesis)

/// Corpus BLEU from summed counts (no smoothing), in [0, 1].
double corpus_bleu(std::span<const BleuPair> pairs, const BleuConfig& config = {});

/// Average Lagging over a read trace. tau is the first step that has read the
/// whole source, or |u| if no step has.
double average_lagging(std::span<const int> g_trace, int src_len, int hyp_len);

/// |Pearson r|. Throws NumericError("zero variance") for constant input.
double pearson_abs(std::span<const double> xs, std::span<const double> ys);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> xs, std::span<const double> ys);

}  // namespace simt
