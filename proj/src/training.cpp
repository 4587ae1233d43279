#include "simt/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "simt/error.hpp"
#include "simt/metrics.hpp"
#include "simt/random.hpp"
#include "simt/transformer.hpp"

namespace simt {

CeMode parse_ce_mode(const std::string& name) {
  if (name == "consistent") return CeMode::consistent;
  if (name == "inconsistent") return CeMode::inconsistent;
  if (name == "multipath") return CeMode::multipath;
  throw ConfigError("unknown training mode '" + name + "' (consistent|inconsistent|multipath)");
}

std::string to_string(CeMode mode) {
  switch (mode) {
    case CeMode::consistent: return "consistent";
    case CeMode::inconsistent: return "inconsistent";
    case CeMode::multipath: return "multipath";
  }
  return "?";
}

namespace {

std::string join_ints(std::span<const int> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

void put_adam(KeyValues& kv, const std::string& prefix, const AdamConfig& a) {
  kv[prefix + "lr"] = format_real(a.lr);
  kv[prefix + "beta1"] = format_real(a.beta1);
  kv[prefix + "beta2"] = format_real(a.beta2);
  kv[prefix + "eps"] = format_real(a.eps);
}

}  // namespace

void CeTrainConfig::validate() const {
  if (train_k < 1) throw ConfigError("train_k must be >= 1");
  if (mode == CeMode::multipath) {
    if (k_set.empty()) throw ConfigError("multipath k-set must be non-empty");
    for (int k : k_set) {
      if (k < 1) throw ConfigError("multipath k values must be >= 1");
    }
  }
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

KeyValues CeTrainConfig::to_kv() const {
  KeyValues kv{{"ce.mode", to_string(mode)},
               {"ce.train_k", std::to_string(train_k)},
               {"ce.k_set", join_ints(k_set)},
               {"ce.epochs", std::to_string(epochs)},
               {"ce.batch_size", std::to_string(batch_size)},
               {"ce.seed", std::to_string(seed)}};
  put_adam(kv, "ce.adam.", adam);
  return kv;
}

int CeTrainConfig::fixed_lag(int test_k) const {
  return mode == CeMode::inconsistent ? train_k : test_k;
}

double corpus_ce(const Model& model, std::span<const EncodedPair> data, int k) {
  double nll = 0.0;
  long tokens = 0;
  for (const auto& pair : data) {
    const long steps = static_cast<long>(pair.target.size()) + 1;
    nll += sentence_ce(model, pair, k) * static_cast<double>(steps);
    tokens += steps;
  }
  return tokens ? nll / static_cast<double>(tokens) : std::numeric_limits<double>::quiet_NaN();
}

TrainLog train_ce(Model& model, std::span<const EncodedPair> train, int test_k, const CeTrainConfig& config,
                  std::span<const EncodedPair> validation) {
  config.validate();
  if (test_k < 1) throw ConfigError("test_k must be >= 1");
  if (train.empty()) throw ConfigError("empty training corpus");
  TrainLog log;
  if (config.mode == CeMode::inconsistent && config.train_k == test_k) {
    log.warnings.push_back("inconsistent mode with train_k == test_k (" + std::to_string(test_k) +
                           ") is consistent training");
  }
  Rng lag_rng(Rng::mix(config.seed, 0x1a9));
  AdamState adam;
  const ForwardOptions fwd_base{model.config().dropout, nullptr};
  Rng dropout_rng(Rng::mix(config.seed, 0xd70));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = make_batches(train, config.batch_size, Rng::mix(config.seed, static_cast<std::uint64_t>(epoch)));
    double nll_sum = 0.0;
    long token_sum = 0;
    for (const auto& batch : batches) {
      int lag = config.fixed_lag(test_k);
      if (config.mode == CeMode::multipath) {
        lag = config.k_set[lag_rng.below(config.k_set.size())];
      }
      log.batch_lags.push_back(lag);
      const std::vector<int> lags(batch.size(), lag);
      ForwardOptions fwd = fwd_base;
      fwd.rng = &dropout_rng;
      auto r = gradient(model, [&](ParamBinding& b) { return ce_prefix_loss_graph(b, batch, lags, fwd); });
      const long tokens = std::accumulate(batch.target_lengths.begin(), batch.target_lengths.end(), 0L);
      nll_sum += r.loss * static_cast<double>(tokens);
      token_sum += tokens;
      apply_update(model.params(), r.grads, adam, config.adam);
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_ce = nll_sum / static_cast<double>(token_sum);
    e.val_ce = validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                  : corpus_ce(model, validation, test_k);
    log.epochs.push_back(e);
  }
  return log;
}

void MrtConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
  if (n < 1) throw ConfigError("candidate count n must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(sharpness > 0.0)) throw ConfigError("sharpness must be positive");
  decode_config(seed).validate();
}

KeyValues MrtConfig::to_kv() const {
  KeyValues kv{{"mrt.gamma", format_real(gamma)},
               {"mrt.n", std::to_string(n)},
               {"mrt.generation", to_string(generation)},
               {"mrt.top_p", format_real(top_p)},
               {"mrt.beam_width", std::to_string(beam_width)},
               {"mrt.max_len", std::to_string(max_len)},
               {"mrt.epochs", std::to_string(epochs)},
               {"mrt.batch_size", std::to_string(batch_size)},
               {"mrt.seed", std::to_string(seed)},
               {"mrt.sharpness", format_real(sharpness)},
               {"mrt.include_reference", include_reference ? "1" : "0"},
               {"mrt.normalize_al", normalize_al ? "1" : "0"}};
  put_adam(kv, "mrt.adam.", adam);
  return kv;
}

DecodeConfig MrtConfig::decode_config(std::uint64_t decode_seed) const {
  DecodeConfig d;
  d.method = generation;
  d.n = n;
  d.beam_width = std::max(beam_width, n);
  d.top_p = top_p;
  d.max_len = max_len;
  d.seed = decode_seed;
  return d;
}

double hypothesis_al(const Hypothesis& u, int src_len) {
  const GTrace g = u.latency_trace();
  return average_lagging(g, src_len, static_cast<int>(g.size()));
}

double mrt_cost(std::span<const int> source, std::span<const int> reference, const Hypothesis& u,
                double gamma, const CostOptions& options) {
  const int src_len = static_cast<int>(source.size());
  double al = hypothesis_al(u, src_len);
  if (options.normalize_al) al /= static_cast<double>(src_len);
  const auto content = u.content();
  const double bleu = sentence_bleu(reference, content);
  return gamma * al + (1.0 - gamma) * (1.0 - bleu);
}

double expected_cost(std::span<const double> log_probs, std::span<const double> costs, double sharpness) {
  if (log_probs.empty()) throw ConfigError("empty candidate set");
  if (log_probs.size() != costs.size()) throw ShapeError("one cost per candidate required");
  double mx = -std::numeric_limits<double>::infinity();
  for (double lp : log_probs) mx = std::max(mx, sharpness * lp);
  double z = 0.0;
  for (double lp : log_probs) z += std::exp(sharpness * lp - mx);
  const double lse = mx + std::log(z);
  double risk = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) risk += costs[i] * std::exp(sharpness * log_probs[i] - lse);
  return risk;
}

ad::Var mrt_risk_graph(ParamBinding& bind, ad::Var memory, std::span<const Hypothesis> candidates,
                       std::span<const double> costs, double sharpness) {
  if (candidates.empty()) throw ConfigError("empty candidate set");
  if (candidates.size() != costs.size()) throw ShapeError("one cost per candidate required");
  std::vector<ad::Var> totals;
  totals.reserve(candidates.size());
  for (const auto& c : candidates) {
    totals.push_back(ad::sum(step_log_probs_graph(bind, memory, c.tokens, c.g_trace)));
  }
  ad::Var row = ad::transpose(ad::concat_rows(totals));
  if (sharpness != 1.0) row = ad::scale(row, sharpness);
  const Matrix weights = Eigen::Map<const Eigen::RowVectorXd>(costs.data(), static_cast<Eigen::Index>(costs.size()));
  return ad::dot_const(ad::exp(ad::log_softmax(row)), weights);
}

double mrt_risk(const Model& model, std::span<const int> source, std::span<const int> reference,
                std::span<const Hypothesis> candidates, double gamma, const CostOptions& options) {
  if (candidates.empty()) throw ConfigError("empty candidate set");
  std::vector<double> costs;
  for (const auto& c : candidates) costs.push_back(mrt_cost(source, reference, c, gamma, options));
  ad::Tape tape;
  ParamBinding b(tape, model, nullptr, false);
  return mrt_risk_graph(b, encode_graph(b, source), candidates, costs).scalar();
}

TrainLog finetune_mrt(Model& model, std::span<const EncodedPair> train, int test_k, const MrtConfig& config,
                      std::span<const EncodedPair> validation) {
  config.validate();
  const PolicySpec policy = PolicySpec::wait_k(test_k);
  if (train.empty()) throw ConfigError("empty training corpus");
  TrainLog log;
  AdamState adam;
  const CostOptions cost_opt{config.normalize_al};
  long generated = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches =
        make_batches(train, config.batch_size, Rng::mix(config.seed, static_cast<std::uint64_t>(epoch)));
    double risk_sum = 0.0, bleu_sum = 0.0, al_sum = 0.0;
    long sentences = 0, candidates_seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      struct Item {
        const EncodedPair* pair;
        std::vector<Hypothesis> cands;
        std::vector<double> costs;
      };
      std::vector<Item> items;
      for (std::size_t s = 0; s < batch.size(); ++s) {
        const EncodedPair& pair = train[batch.indices[s]];
        const std::uint64_t dseed = Rng::mix(config.seed, (static_cast<std::uint64_t>(epoch) << 40) ^
                                                              (static_cast<std::uint64_t>(bi) << 20) ^ s);
        Item it{&pair, generate_candidates(model, policy, pair.source, config.decode_config(dseed)), {}};
        ++generated;
        if (config.include_reference) {
          Hypothesis ref;
          ref.tokens = pair.target;
          ref.tokens.push_back(Vocabulary::kEos);
          ref.g_trace = make_g_trace(policy, static_cast<int>(pair.source.size()),
                                     static_cast<int>(ref.tokens.size()));
          if (std::none_of(it.cands.begin(), it.cands.end(),
                           [&](const Hypothesis& h) { return h.tokens == ref.tokens; })) {
            it.cands.push_back(std::move(ref));
          }
        }
        for (const auto& c : it.cands) {
          it.costs.push_back(mrt_cost(pair.source, pair.target, c, config.gamma, cost_opt));
          bleu_sum += sentence_bleu(pair.target, c.content());
          al_sum += hypothesis_al(c, static_cast<int>(pair.source.size()));
          ++candidates_seen;
        }
        items.push_back(std::move(it));
      }
      auto r = gradient(model, [&](ParamBinding& b) {
        std::vector<ad::Var> risks;
        for (const auto& it : items) {
          ad::Var memory = encode_graph(b, it.pair->source);
          risks.push_back(mrt_risk_graph(b, memory, it.cands, it.costs, config.sharpness));
        }
        return ad::scale(ad::sum(risks), 1.0 / static_cast<double>(items.size()));
      });
      risk_sum += r.loss * static_cast<double>(items.size());
      sentences += static_cast<long>(items.size());
      apply_update(model.params(), r.grads, adam, config.adam);
    }
    EpochLog e;
    e.epoch = epoch;
    e.mean_risk = risk_sum / static_cast<double>(sentences);
    e.mean_cand_bleu = bleu_sum / static_cast<double>(candidates_seen);
    e.mean_cand_al = al_sum / static_cast<double>(candidates_seen);
    e.candidates_generated = generated;
    e.train_ce = std::numeric_limits<double>::quiet_NaN();
    e.val_ce = validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                  : corpus_ce(model, validation, test_k);
    log.epochs.push_back(e);
  }
  return log;
}

GradientCheckResult check_gradient(const Model& model, const LossClosure& loss, double step,
                                   std::size_t samples, std::uint64_t seed, double floor) {
  const auto analytic = gradient(model, loss);
  const Parameters& base = model.params();
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t t = 0; t < base.size(); ++t)
    for (Eigen::Index i = 0; i < base[t].size(); ++i) coords.emplace_back(t, i);
  if (samples > 0 && samples < coords.size()) {
    Rng rng(seed);
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(samples);
  }
  GradientCheckResult res;
  Parameters probe = base;
  for (const auto& [t, i] : coords) {
    const double orig = base[t].data()[i];
    probe[t].data()[i] = orig + step;
    const double up = evaluate_loss(model, loss, &probe);
    probe[t].data()[i] = orig - step;
    const double down = evaluate_loss(model, loss, &probe);
    probe[t].data()[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double a = analytic.grads[t].data()[i];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
    res.max_rel_error = std::max(res.max_rel_error, rel);
    ++res.checked;
  }
  return res;
}

GradientCheckResult gradient_check(const Model& model, std::span<const int> source,
                                   std::span<const int> reference, std::span<const Hypothesis> candidates,
                                   double gamma, double step, std::size_t samples, std::uint64_t seed) {
  std::vector<double> costs;
  for (const auto& c : candidates) costs.push_back(mrt_cost(source, reference, c, gamma));
  return check_gradient(
      model,
      [&](ParamBinding& b) { return mrt_risk_graph(b, encode_graph(b, source), candidates, costs); },
      step, samples, seed);
}

}  // namespace simt
