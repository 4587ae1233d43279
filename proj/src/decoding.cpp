#include "simt/decoding.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

#include "simt/error.hpp"
#include "simt/random.hpp"
#include "simt/transformer.hpp"

namespace simt {

bool Hypothesis::finished() const { return !tokens.empty() && tokens.back() == Vocabulary::kEos; }

std::vector<int> Hypothesis::content() const {
  std::vector<int> out = tokens;
  if (finished()) out.pop_back();
  return out;
}

GTrace Hypothesis::latency_trace() const {
  if (finished() && tokens.size() > 1) return GTrace(g_trace.begin(), g_trace.end() - 1);
  return g_trace;
}

double Hypothesis::normalized_score() const {
  return tokens.empty() ? 0.0 : total_log_prob / static_cast<double>(tokens.size());
}

void DecodeConfig::validate() const {
  if (n < 1) throw ConfigError("candidate count n must be >= 1");
  if (method == DecodeMethod::beam && beam_width < n) {
    throw ConfigError("beam width must be >= n");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0,1]");
  if (max_len < 0) throw ConfigError("max_len must be >= 0");
}

DecodeMethod parse_decode_method(const std::string& name) {
  if (name == "greedy") return DecodeMethod::greedy;
  if (name == "beam") return DecodeMethod::beam;
  if (name == "top_p" || name == "top-p" || name == "sample" || name == "sampling") return DecodeMethod::top_p;
  throw ConfigError("unknown decode method '" + name + "' (greedy|beam|top_p)");
}

std::string to_string(DecodeMethod method) {
  switch (method) {
    case DecodeMethod::greedy: return "greedy";
    case DecodeMethod::beam: return "beam";
    case DecodeMethod::top_p: return "top_p";
  }
  return "?";
}

bool is_emittable(int token) { return token != Vocabulary::kPad && token != Vocabulary::kBos; }

int resolve_max_len(const Model& model, std::span<const int> source, int requested) {
  const int cap = model.config().max_len;
  if (requested > 0) return std::min(requested, cap);
  return std::min(cap, 2 * static_cast<int>(source.size()) + 2);
}

namespace {

int argmax_emittable(const Eigen::VectorXd& logp) {
  int best = -1;
  for (int t = 0; t < logp.size(); ++t) {
    if (!is_emittable(t)) continue;
    if (best < 0 || logp(t) > logp(best)) best = t;
  }
  return best;
}

void append(Hypothesis& h, int token, int g, double logp) {
  h.tokens.push_back(token);
  h.g_trace.push_back(g);
  h.step_log_probs.push_back(logp);
  h.total_log_prob += logp;
}

// Shared driver: forced tokens first, then greedy choices.
Hypothesis forced_then_greedy(const Model& model, const PolicySpec& policy, std::span<const int> source,
                              std::span<const int> forced, int max_len) {
  const int src_len = static_cast<int>(source.size());
  IncrementalDecoder dec(model, source);
  auto state = dec.start();
  Hypothesis h;
  Eigen::VectorXd logp = dec.step(state, Vocabulary::kBos, policy.lag(1, src_len));
  for (int i = 1; i <= max_len; ++i) {
    const int g = policy.lag(i, src_len);
    const std::size_t idx = static_cast<std::size_t>(i - 1);
    const int token = idx < forced.size() ? forced[idx] : argmax_emittable(logp);
    append(h, token, g, logp(token));
    if (idx >= forced.size() && token == Vocabulary::kEos) break;
    if (i == max_len) break;
    logp = dec.step(state, token, policy.lag(i + 1, src_len));
  }
  return h;
}

std::vector<Hypothesis> dedup_sorted(std::vector<Hypothesis> hyps, int n) {
  std::stable_sort(hyps.begin(), hyps.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.normalized_score() > b.normalized_score();
  });
  std::vector<Hypothesis> out;
  std::set<std::vector<int>> seen;
  for (auto& h : hyps) {
    if (static_cast<int>(out.size()) >= n) break;
    if (seen.insert(h.tokens).second) out.push_back(std::move(h));
  }
  return out;
}

}  // namespace

Hypothesis greedy_decode(const Model& model, const PolicySpec& policy, std::span<const int> source,
                         int max_len) {
  return forced_then_greedy(model, policy, source, {}, resolve_max_len(model, source, max_len));
}

Hypothesis prefix_constrained_decode(const Model& model, const PolicySpec& policy,
                                     std::span<const int> source, std::span<const int> gold_prefix,
                                     int max_len) {
  const int cap = resolve_max_len(model, source, max_len);
  if (static_cast<int>(gold_prefix.size()) >= cap) {
    throw ConfigError("gold prefix length " + std::to_string(gold_prefix.size()) +
                      " must be below max_len " + std::to_string(cap));
  }
  for (int t : gold_prefix) {
    if (t < 0 || t >= model.config().tgt_vocab) {
      throw ConfigError("gold prefix token id " + std::to_string(t) + " outside target vocabulary");
    }
  }
  return forced_then_greedy(model, policy, source, gold_prefix, cap);
}

bool teacher_forced_correct(const Model& model, const PolicySpec& policy, std::span<const int> source,
                            std::span<const int> reference, int position) {
  if (position < 1 || position > static_cast<int>(reference.size())) {
    throw ConfigError("teacher-forced position out of range");
  }
  const int src_len = static_cast<int>(source.size());
  IncrementalDecoder dec(model, source);
  auto state = dec.start();
  Eigen::VectorXd logp = dec.step(state, Vocabulary::kBos, policy.lag(1, src_len));
  for (int i = 1; i < position; ++i) {
    logp = dec.step(state, reference[static_cast<std::size_t>(i - 1)], policy.lag(i + 1, src_len));
  }
  return argmax_emittable(logp) == reference[static_cast<std::size_t>(position - 1)];
}

std::vector<Hypothesis> beam_decode(const Model& model, const PolicySpec& policy,
                                    std::span<const int> source, const DecodeConfig& config) {
  config.validate();
  const int width = config.beam_width;
  const int max_len = resolve_max_len(model, source, config.max_len);
  const int src_len = static_cast<int>(source.size());
  IncrementalDecoder dec(model, source);

  struct Beam {
    IncrementalDecoder::State state;
    Hypothesis hyp;
    Eigen::VectorXd next;
  };
  std::vector<Beam> live;
  {
    Beam b{dec.start(), {}, {}};
    b.next = dec.step(b.state, Vocabulary::kBos, policy.lag(1, src_len));
    live.push_back(std::move(b));
  }
  std::vector<Hypothesis> finished;

  struct Expansion {
    double score;
    std::size_t beam;
    int token;
  };
  for (int i = 1; i <= max_len && !live.empty(); ++i) {
    const int g = policy.lag(i, src_len);
    std::vector<Expansion> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      for (int t = 0; t < live[b].next.size(); ++t) {
        if (is_emittable(t)) cands.push_back({live[b].hyp.total_log_prob + live[b].next(t), b, t});
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Expansion& a, const Expansion& b) { return a.score > b.score; });

    std::vector<Beam> next_live;
    for (const auto& c : cands) {
      if (static_cast<int>(next_live.size()) >= width) break;
      Hypothesis h = live[c.beam].hyp;
      append(h, c.token, g, live[c.beam].next(c.token));
      if (c.token == Vocabulary::kEos) {
        finished.push_back(std::move(h));
        continue;
      }
      if (i == max_len) {
        finished.push_back(std::move(h));
        next_live.push_back({});  // occupies a slot; never expanded
        continue;
      }
      Beam nb{live[c.beam].state, std::move(h), {}};
      nb.next = dec.step(nb.state, c.token, policy.lag(i + 1, src_len));
      next_live.push_back(std::move(nb));
    }
    if (i == max_len) break;
    live = std::move(next_live);
    if (static_cast<int>(finished.size()) >= width) break;
  }
  return dedup_sorted(std::move(finished), config.n);
}

std::vector<int> nucleus(const Eigen::VectorXd& probs, double top_p) {
  std::vector<int> order;
  for (int t = 0; t < probs.size(); ++t) {
    if (probs(t) > 0.0) order.push_back(t);
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(a) > probs(b); });
  double total = 0.0;
  for (int t : order) total += probs(t);
  std::vector<int> kept;
  double mass = 0.0;
  for (int t : order) {
    kept.push_back(t);
    mass += probs(t);
    if (mass >= top_p * total) break;
  }
  return kept;
}

int sample_from_nucleus(const Eigen::VectorXd& probs, double top_p, Rng& rng) {
  const auto kept = nucleus(probs, top_p);
  if (kept.empty()) throw NumericError("empty nucleus");
  double mass = 0.0;
  for (int t : kept) mass += probs(t);
  double u = rng.uniform() * mass;
  for (int t : kept) {
    u -= probs(t);
    if (u < 0.0) return t;
  }
  return kept.back();
}

std::vector<Hypothesis> sample_decode(const Model& model, const PolicySpec& policy,
                                      std::span<const int> source, const DecodeConfig& config) {
  config.validate();
  const int max_len = resolve_max_len(model, source, config.max_len);
  const int src_len = static_cast<int>(source.size());
  IncrementalDecoder dec(model, source);
  Rng rng(config.seed);
  std::vector<Hypothesis> rollouts;
  for (int r = 0; r < config.n; ++r) {
    auto state = dec.start();
    Hypothesis h;
    Eigen::VectorXd logp = dec.step(state, Vocabulary::kBos, policy.lag(1, src_len));
    for (int i = 1; i <= max_len; ++i) {
      Eigen::VectorXd probs = logp.array().exp().matrix();
      probs(Vocabulary::kPad) = 0.0;
      probs(Vocabulary::kBos) = 0.0;
      const int token = sample_from_nucleus(probs, config.top_p, rng);
      append(h, token, policy.lag(i, src_len), logp(token));
      if (token == Vocabulary::kEos || i == max_len) break;
      logp = dec.step(state, token, policy.lag(i + 1, src_len));
    }
    rollouts.push_back(std::move(h));
  }
  return dedup_sorted(std::move(rollouts), config.n);
}

std::vector<Hypothesis> generate_candidates(const Model& model, const PolicySpec& policy,
                                            std::span<const int> source, const DecodeConfig& config) {
  switch (config.method) {
    case DecodeMethod::greedy: return {greedy_decode(model, policy, source, config.max_len)};
    case DecodeMethod::beam: return beam_decode(model, policy, source, config);
    case DecodeMethod::top_p: return sample_decode(model, policy, source, config);
  }
  return {};
}

std::string format_hypothesis_line(const Hypothesis& h, const Vocabulary& tgt_vocab) {
  const auto content = h.content();
  return join_tokens(tgt_vocab.decode(content)) + '\t' + format_g_trace(h.latency_trace()) + '\t' +
         format_real(h.total_log_prob);
}

HypothesisRecord parse_hypothesis_line(const std::string& line) {
  const auto t1 = line.find('\t');
  const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
  if (t2 == std::string::npos) throw IngestError("hypothesis line needs 3 tab-separated fields");
  HypothesisRecord r;
  r.tokens = split_tokens(std::string_view(line).substr(0, t1));
  r.g_trace = parse_g_trace(line.substr(t1 + 1, t2 - t1 - 1));
  const std::string score = line.substr(t2 + 1);
  char* end = nullptr;
  r.total_log_prob = std::strtod(score.c_str(), &end);
  if (end == score.c_str()) throw IngestError("malformed log-prob field: '" + score + "'");
  return r;
}

std::vector<HypothesisRecord> read_hypothesis_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  std::vector<HypothesisRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(parse_hypothesis_line(line));
  }
  return out;
}

}  // namespace simt
