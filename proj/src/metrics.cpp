#include "simt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "simt/error.hpp"
#include "simt/policy.hpp"

namespace simt {

namespace {

using NGramCounts = std::map<std::vector<int>, long>;

NGramCounts count_ngrams(std::span<const int> seq, int n) {
  NGramCounts counts;
  const auto len = static_cast<int>(seq.size());
  for (int i = 0; i + n <= len; ++i) {
    ++counts[std::vector<int>(seq.begin() + i, seq.begin() + i + n)];
  }
  return counts;
}

double brevity_penalty(double ref_len, double hyp_len) {
  return std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  if (matches.size() < other.matches.size()) {
    matches.resize(other.matches.size(), 0);
    candidates.resize(other.candidates.size(), 0);
  }
  for (std::size_t n = 0; n < other.matches.size(); ++n) {
    matches[n] += other.matches[n];
    candidates[n] += other.candidates[n];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

BleuStats bleu_stats(std::span<const int> reference, std::span<const int> hypothesis,
                     int max_order) {
  if (max_order < 1) throw ConfigError("BLEU order must be >= 1");
  BleuStats s;
  s.hyp_len = static_cast<long>(hypothesis.size());
  s.ref_len = static_cast<long>(reference.size());
  for (int n = 1; n <= max_order; ++n) {
    const auto ref = count_ngrams(reference, n);
    const auto hyp = count_ngrams(hypothesis, n);
    long matched = 0, total = 0;
    for (const auto& [gram, c] : hyp) {
      total += c;
      if (auto it = ref.find(gram); it != ref.end()) matched += std::min(c, it->second);
    }
    s.matches.push_back(matched);
    s.candidates.push_back(total);
  }
  return s;
}

double sentence_bleu(std::span<const int> reference, std::span<const int> hypothesis,
                     const BleuConfig& config) {
  if (reference.empty()) throw ConfigError("sentence_bleu: empty reference");
  if (hypothesis.empty()) return 0.0;
  const auto s = bleu_stats(reference, hypothesis, config.max_order);
  if (s.matches[0] == 0) return 0.0;

  bool any_zero = false;
  for (int n = 0; n < config.max_order; ++n) {
    if (s.matches[static_cast<std::size_t>(n)] == 0 || s.candidates[static_cast<std::size_t>(n)] == 0)
      any_zero = true;
  }
  if (any_zero && !config.smooth) return 0.0;

  double log_sum = 0.0;
  for (int n = 0; n < config.max_order; ++n) {
    double m = static_cast<double>(s.matches[static_cast<std::size_t>(n)]);
    double c = static_cast<double>(s.candidates[static_cast<std::size_t>(n)]);
    if (any_zero && n >= 1) {
      m += 1.0;
      c += 1.0;
    }
    log_sum += std::log(m / c);
  }
  const double bp = brevity_penalty(static_cast<double>(s.ref_len), static_cast<double>(s.hyp_len));
  return bp * std::exp(log_sum / config.max_order);
}

double corpus_bleu(std::span<const BleuPair> pairs, const BleuConfig& config) {
  if (pairs.empty()) throw ConfigError("corpus_bleu: empty corpus");
  BleuStats total;
  for (const auto& [ref, hyp] : pairs) total += bleu_stats(ref, hyp, config.max_order);
  if (total.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < config.max_order; ++n) {
    const auto m = total.matches[static_cast<std::size_t>(n)];
    const auto c = total.candidates[static_cast<std::size_t>(n)];
    if (m == 0 || c == 0) return 0.0;
    log_sum += std::log(static_cast<double>(m) / static_cast<double>(c));
  }
  return brevity_penalty(static_cast<double>(total.ref_len), static_cast<double>(total.hyp_len)) *
         std::exp(log_sum / config.max_order);
}

double average_lagging(std::span<const int> g_trace, int src_len, int hyp_len) {
  if (src_len < 1 || hyp_len < 1) throw ConfigError("average_lagging: lengths must be >= 1");
  if (static_cast<int>(g_trace.size()) != hyp_len) {
    throw ShapeError("average_lagging: trace length " + std::to_string(g_trace.size()) +
                     " != hypothesis length " + std::to_string(hyp_len));
  }
  require_valid_g_trace(g_trace, src_len);

  int tau = hyp_len;
  for (int i = 0; i < hyp_len; ++i) {
    if (g_trace[static_cast<std::size_t>(i)] == src_len) {
      tau = i + 1;
      break;
    }
  }
  double sum = 0.0;
  for (int i = 1; i <= tau; ++i) {
    sum += static_cast<double>(g_trace[static_cast<std::size_t>(i - 1)]) -
           static_cast<double>(i - 1) * src_len / hyp_len;
  }
  return sum / tau;
}

double pearson_abs(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("pearson_abs: length mismatch");
  if (xs.size() < 2) throw ConfigError("pearson_abs: need at least 2 points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("zero variance");
  return std::min(1.0, std::abs(sxy) / std::sqrt(sxx * syy));
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("spearman: length mismatch");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("zero variance");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace simt
