#include "simt/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "simt/error.hpp"
#include "simt/metrics.hpp"
#include "simt/transformer.hpp"

namespace simt {

namespace {

template <class T>
std::string join_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_real(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

std::string fixed(double v) { return format_fixed(v, 6); }

void merge(KeyValues& into, const KeyValues& from, const std::string& prefix = "") {
  for (const auto& [k, v] : from) into[prefix + k] = v;
}

}  // namespace

void ExperimentConfig::validate() const {
  task.validate();
  if (train_ks.empty() || test_ks.empty()) throw ConfigError("k-sets must be non-empty");
  for (int k : train_ks) {
    if (k < 1) throw ConfigError("train k values must be >= 1");
  }
  for (int k : test_ks) {
    if (k < 1) throw ConfigError("test k values must be >= 1");
  }
  for (double g : gammas) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("gamma values must lie in [0,1]");
  }
  if (metric != "bleu" && metric != "ce") throw ConfigError("metric must be bleu or ce");
  if (eval_split != "valid" && eval_split != "train") throw ConfigError("eval_split must be valid or train");
  if (valid_size < 1) throw ConfigError("valid_size must be >= 1");
  if (train_src.empty() != train_tgt.empty()) throw ConfigError("give both train_src and train_tgt");
  if (valid_src.empty() != valid_tgt.empty()) throw ConfigError("give both valid_src and valid_tgt");
  ce.validate();
  mrt.validate();
}

KeyValues ExperimentConfig::to_kv() const {
  KeyValues kv{
      {"task.vocab_size", std::to_string(task.vocab_size)},
      {"task.min_len", std::to_string(task.min_len)},
      {"task.max_len", std::to_string(task.max_len)},
      {"task.swap_prob", format_real(task.swap_prob)},
      {"task.mapping_seed", std::to_string(task.mapping_seed)},
      {"task.size", std::to_string(task.size)},
      {"data_seed", std::to_string(data_seed)},
      {"valid_size", std::to_string(valid_size)},
      {"valid_seed", std::to_string(valid_seed)},
      {"train_src", train_src},
      {"train_tgt", train_tgt},
      {"valid_src", valid_src},
      {"valid_tgt", valid_tgt},
      {"eval_split", eval_split},
      {"eval_seed", std::to_string(eval_seed)},
      {"init_seed", std::to_string(init_seed)},
      {"train_ks", join_list(train_ks)},
      {"test_ks", join_list(test_ks)},
      {"gammas", join_list(gammas)},
      {"metric", metric},
      {"decode_max_len", std::to_string(decode_max_len)},
  };
  KeyValues m = model.to_kv();
  m.erase("src_vocab");
  m.erase("tgt_vocab");
  merge(kv, m, "model.");
  merge(kv, ce.to_kv());
  merge(kv, mrt.to_kv());
  return kv;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_kv_text(to_kv())); }

namespace {

PreparedData prepare(const ExperimentConfig& config, const Vocabulary* src_vocab, const Vocabulary* tgt_vocab) {
  config.validate();
  ParallelCorpus train, valid;
  if (!config.train_src.empty()) {
    train = load_parallel(config.train_src, config.train_tgt);
    if (!config.valid_src.empty()) {
      valid = load_parallel(config.valid_src, config.valid_tgt);
    } else {
      // Hold out the tail of the training file.
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.valid_size), train.size() / 2);
      std::vector<SentencePair> head(train.pairs().begin(), train.pairs().end() - static_cast<std::ptrdiff_t>(n));
      std::vector<SentencePair> tail(train.pairs().end() - static_cast<std::ptrdiff_t>(n), train.pairs().end());
      train = ParallelCorpus(std::move(head));
      valid = ParallelCorpus(std::move(tail));
    }
  } else {
    train = generate_synthetic(config.task, config.data_seed);
    SyntheticTaskSpec vspec = config.task;
    vspec.size = config.valid_size;
    valid = generate_synthetic(vspec, config.valid_seed);
  }
  PreparedData d;
  d.src_vocab = src_vocab ? *src_vocab : build_vocab(train, VocabSide::source);
  d.tgt_vocab = tgt_vocab ? *tgt_vocab : build_vocab(train, VocabSide::target);
  d.train = encode_corpus(train, d.src_vocab, d.tgt_vocab);
  d.valid = encode_corpus(valid, d.src_vocab, d.tgt_vocab);
  if (config.eval_split == "train") {
    d.eval = encode_corpus(train.sample(valid.size(), config.eval_seed), d.src_vocab, d.tgt_vocab);
  } else {
    d.eval = d.valid;
  }
  return d;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config) { return prepare(config, nullptr, nullptr); }

PreparedData prepare_data(const ExperimentConfig& config, const Vocabulary& src_vocab,
                          const Vocabulary& tgt_vocab) {
  return prepare(config, &src_vocab, &tgt_vocab);
}

ModelConfig sized_model_config(const ExperimentConfig& config, const PreparedData& data) {
  ModelConfig mc = config.model;
  mc.src_vocab = static_cast<int>(data.src_vocab.size());
  mc.tgt_vocab = static_cast<int>(data.tgt_vocab.size());
  std::size_t longest_src = 0, longest_tgt = 0;
  for (const auto* set : {&data.train, &data.valid, &data.eval}) {
    for (const auto& p : *set) {
      longest_src = std::max(longest_src, p.source.size());
      longest_tgt = std::max(longest_tgt, p.target.size() + 1);
    }
  }
  if (static_cast<int>(std::max(longest_src, longest_tgt)) > mc.max_len) {
    throw ConfigError("model max_len " + std::to_string(mc.max_len) + " is shorter than the data (" +
                      std::to_string(std::max(longest_src, longest_tgt)) + " positions)");
  }
  mc.validate();
  return mc;
}

EvalResult evaluate_model(const Model& model, std::span<const EncodedPair> data, int test_k, int max_len) {
  if (data.empty()) throw ConfigError("empty evaluation set");
  const PolicySpec policy = PolicySpec::wait_k(test_k);
  EvalResult r;
  std::vector<BleuPair> pairs;
  double al_sum = 0.0;
  for (const auto& p : data) {
    Hypothesis h = greedy_decode(model, policy, p.source, max_len);
    pairs.emplace_back(p.target, h.content());
    al_sum += hypothesis_al(h, static_cast<int>(p.source.size()));
    r.hypotheses.push_back(std::move(h));
  }
  r.bleu = corpus_bleu(pairs);
  r.al = al_sum / static_cast<double>(data.size());
  r.ce = corpus_ce(model, data, test_k);
  return r;
}

GridResult run_grid(const ExperimentConfig& config, const PreparedData& data) {
  const ModelConfig mc = sized_model_config(config, data);
  GridResult res;
  for (int train_k : config.train_ks) {
    try {
      Model model = init_model(mc, config.init_seed);
      CeTrainConfig ce = config.ce;
      ce.mode = CeMode::consistent;
      train_ce(model, data.train, train_k, ce);
      for (int test_k : config.test_ks) {
        const EvalResult ev = evaluate_model(model, data.eval, test_k, config.decode_max_len);
        res.rows.push_back({"wait-k", train_k, test_k, 100.0 * ev.bleu, ev.al, ev.ce, train_k == test_k});
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("grid cell train_k=" + std::to_string(train_k) + " failed: " + e.what());
    }
  }
  for (int test_k : config.test_ks) {
    const auto diag = std::find_if(res.rows.begin(), res.rows.end(), [&](const GridRow& r) {
      return r.test_k == test_k && r.diagonal;
    });
    if (diag == res.rows.end()) continue;
    GridColumnReport c;
    c.test_k = test_k;
    c.diagonal_ce_rank = 1;
    c.diagonal_bleu_rank = 1;
    double best_other = std::numeric_limits<double>::infinity();
    for (const auto& r : res.rows) {
      if (r.test_k != test_k || r.diagonal) continue;
      if (r.ce_loss < diag->ce_loss) ++c.diagonal_ce_rank;
      if (r.bleu > diag->bleu) ++c.diagonal_bleu_rank;
      best_other = std::min(best_other, r.ce_loss);
    }
    c.ce_delta = std::isfinite(best_other) ? diag->ce_loss - best_other : 0.0;
    c.ce_top2 = c.diagonal_ce_rank <= 2;
    res.columns.push_back(c);
  }
  return res;
}

GridResult run_grid(const ExperimentConfig& config) { return run_grid(config, prepare_data(config)); }

std::vector<CorrelationRow> correlation_from_scores(int k, std::span<const double> losses,
                                                    std::span<const double> bleus) {
  if (losses.size() != bleus.size()) throw ShapeError("one BLEU per loss required");
  const double mean = losses.empty() ? 0.0
                                     : std::accumulate(losses.begin(), losses.end(), 0.0) /
                                           static_cast<double>(losses.size());
  std::vector<double> lo_l, lo_b, hi_l, hi_b;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (losses[i] <= mean) {
      lo_l.push_back(losses[i]);
      lo_b.push_back(bleus[i]);
    } else {
      hi_l.push_back(losses[i]);
      hi_b.push_back(bleus[i]);
    }
  }
  auto row = [k](const char* name, std::span<const double> l, std::span<const double> b) {
    CorrelationRow r{k, name, l.size(), std::nullopt};
    if (l.size() >= 2) {
      try {
        r.abs_pearson = pearson_abs(l, b);
      } catch (const NumericError&) {
      }
    }
    return r;
  };
  return {row("Entire", losses, bleus), row("Low", lo_l, lo_b), row("High", hi_l, hi_b)};
}

std::vector<CorrelationRow> correlation_report(const std::map<int, const Model*>& model_per_k,
                                               std::span<const EncodedPair> data) {
  std::vector<CorrelationRow> rows;
  for (const auto& [k, model] : model_per_k) {
    const PolicySpec policy = PolicySpec::wait_k(k);
    std::vector<double> losses, bleus;
    for (const auto& p : data) {
      losses.push_back(sentence_ce(*model, p, k));
      bleus.push_back(sentence_bleu(p.target, greedy_decode(*model, policy, p.source).content()));
    }
    auto part = correlation_from_scores(k, losses, bleus);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

namespace {

double ls_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  if (xs.size() < 2) return 0.0;
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxx == 0.0 ? 0.0 : sxy / sxx;
}

}  // namespace

PrefixBiasReport prefix_bias_report(const Model& model_a, const Model& model_b,
                                    std::span<const EncodedPair> bucket, int k_test, int max_len) {
  if (bucket.empty()) throw ConfigError("prefix-bias bucket is empty");
  const std::size_t L = bucket.front().target.size();
  for (const auto& p : bucket) {
    if (p.target.size() != L) throw ConfigError("prefix-bias bucket mixes target lengths");
  }
  const PolicySpec policy = PolicySpec::wait_k(k_test);
  PrefixBiasReport rep;
  rep.target_len = static_cast<int>(L);
  std::vector<double> ms, ba, bb;
  for (std::size_t m = 0; m < L; ++m) {
    PrefixBiasRow row;
    row.prefix_len = static_cast<int>(m);
    for (const auto& p : bucket) {
      const std::span<const int> prefix(p.target.data(), m);
      const std::span<const int> gold_suffix(p.target.data() + m, L - m);
      for (int which = 0; which < 2; ++which) {
        const Model& model = which == 0 ? model_a : model_b;
        const Hypothesis h = prefix_constrained_decode(model, policy, p.source, prefix, max_len);
        const auto content = h.content();
        const std::vector<int> suffix(content.begin() + static_cast<std::ptrdiff_t>(std::min(m, content.size())),
                                      content.end());
        const double bleu = sentence_bleu(gold_suffix, suffix);
        const bool correct = h.tokens.size() > m && h.tokens[m] == p.target[m];
        (which == 0 ? row.bleu_a : row.bleu_b) += bleu;
        (which == 0 ? row.acc_a : row.acc_b) += correct ? 1.0 : 0.0;
      }
    }
    const double n = static_cast<double>(bucket.size());
    row.bleu_a *= 100.0 / n;
    row.bleu_b *= 100.0 / n;
    row.acc_a /= n;
    row.acc_b /= n;
    ms.push_back(static_cast<double>(m));
    ba.push_back(row.bleu_a);
    bb.push_back(row.bleu_b);
    rep.rows.push_back(row);
  }
  rep.slope_a = ls_slope(ms, ba);
  rep.slope_b = ls_slope(ms, bb);
  return rep;
}

std::vector<CurveRow> latency_quality_curve(std::span<const CurveModel> models,
                                            std::span<const EncodedPair> data, std::span<const int> test_ks,
                                            int max_len) {
  std::vector<CurveRow> rows;
  for (const auto& cm : models) {
    for (int k : test_ks) {
      const auto it = cm.per_k.find(k);
      const Model* m = it != cm.per_k.end() ? it->second : cm.shared;
      if (m == nullptr) throw ConfigError("curve '" + cm.label + "' has no model for k=" + std::to_string(k));
      const EvalResult ev = evaluate_model(*m, data, k, max_len);
      rows.push_back({cm.label, k, ev.al, 100.0 * ev.bleu});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const CurveRow& a, const CurveRow& b) {
    return a.label != b.label ? a.label < b.label : a.test_k < b.test_k;
  });
  return rows;
}

std::vector<CurveRow> run_curve(const ExperimentConfig& config, const PreparedData& data) {
  const ModelConfig mc = sized_model_config(config, data);
  std::map<int, Model> consistent, uni, bi;
  for (int k : config.test_ks) {
    Model m = init_model(mc, config.init_seed);
    CeTrainConfig ce = config.ce;
    ce.mode = CeMode::consistent;
    train_ce(m, data.train, k, ce);
    consistent.emplace(k, m);
    MrtConfig mrt = config.mrt;
    mrt.gamma = 0.0;
    Model u = m;
    finetune_mrt(u, data.train, k, mrt);
    uni.emplace(k, std::move(u));
    Model b = m;
    finetune_mrt(b, data.train, k, config.mrt);
    bi.emplace(k, std::move(b));
  }
  Model inconsistent = init_model(mc, config.init_seed);
  {
    CeTrainConfig ce = config.ce;
    ce.mode = CeMode::inconsistent;
    train_ce(inconsistent, data.train, config.test_ks.front(), ce);
  }
  Model multipath = init_model(mc, config.init_seed);
  {
    CeTrainConfig ce = config.ce;
    ce.mode = CeMode::multipath;
    train_ce(multipath, data.train, config.test_ks.front(), ce);
  }
  auto per_k = [](const std::map<int, Model>& models) {
    std::map<int, const Model*> out;
    for (const auto& [k, m] : models) out.emplace(k, &m);
    return out;
  };
  const std::vector<CurveModel> curves{
      {"Consistency-CE", nullptr, per_k(consistent)},
      {"Inconsistency-CE", &inconsistent, {}},
      {"Inconsistency-CE-MP", &multipath, {}},
      {"Consistency-Uni", nullptr, per_k(uni)},
      {"Consistency-Bi", nullptr, per_k(bi)},
  };
  return latency_quality_curve(curves, data.eval, config.test_ks, config.decode_max_len);
}

GammaSweepResult gamma_sweep(const Model& stage1, std::span<const EncodedPair> train,
                             std::span<const EncodedPair> eval, std::span<const double> gammas, int test_k,
                             const MrtConfig& base, int max_len) {
  GammaSweepResult res;
  std::vector<double> gs, als;
  for (double g : gammas) {
    Model m = stage1;
    MrtConfig cfg = base;
    cfg.gamma = g;
    finetune_mrt(m, train, test_k, cfg);
    const EvalResult ev = evaluate_model(m, eval, test_k, max_len);
    res.rows.push_back({g, 100.0 * ev.bleu, ev.al});
    gs.push_back(g);
    als.push_back(ev.al);
  }
  res.spearman_gamma_al = std::numeric_limits<double>::quiet_NaN();
  if (gs.size() >= 2) {
    try {
      res.spearman_gamma_al = spearman(gs, als);
    } catch (const NumericError&) {
    }
  }
  return res;
}

std::string grid_csv(const GridResult& r) {
  std::string out = "train_mode,train_k,test_k,bleu,al,ce_loss,diagonal\n";
  for (const auto& row : r.rows) {
    out += row.train_mode + ',' + std::to_string(row.train_k) + ',' + std::to_string(row.test_k) + ',' +
           fixed(row.bleu) + ',' + fixed(row.al) + ',' + fixed(row.ce_loss) + ',' + (row.diagonal ? "1" : "0") +
           '\n';
  }
  return out;
}

std::string grid_report_csv(const GridResult& r) {
  std::string out = "test_k,diagonal_ce_rank,diagonal_bleu_rank,ce_delta,ce_top2\n";
  for (const auto& c : r.columns) {
    out += std::to_string(c.test_k) + ',' + std::to_string(c.diagonal_ce_rank) + ',' +
           std::to_string(c.diagonal_bleu_rank) + ',' + fixed(c.ce_delta) + ',' + (c.ce_top2 ? "1" : "0") + '\n';
  }
  return out;
}

std::string correlation_csv(std::span<const CorrelationRow> rows) {
  std::string out = "k,subset,size,abs_pearson\n";
  for (const auto& r : rows) {
    out += std::to_string(r.k) + ',' + r.subset + ',' + std::to_string(r.size) + ',' +
           (r.abs_pearson ? fixed(*r.abs_pearson) : std::string("undefined")) + '\n';
  }
  return out;
}

std::string prefix_bias_csv(const PrefixBiasReport& r) {
  std::string out = "prefix_len,bleu_a,bleu_b,acc_a,acc_b\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.prefix_len) + ',' + fixed(row.bleu_a) + ',' + fixed(row.bleu_b) + ',' +
           fixed(row.acc_a) + ',' + fixed(row.acc_b) + '\n';
  }
  return out;
}

std::string curve_csv(std::span<const CurveRow> rows) {
  std::string out = "label,test_k,al,bleu\n";
  for (const auto& r : rows) {
    out += r.label + ',' + std::to_string(r.test_k) + ',' + fixed(r.al) + ',' + fixed(r.bleu) + '\n';
  }
  return out;
}

std::string gamma_csv(const GammaSweepResult& r) {
  std::string out = "gamma,bleu,al\n";
  for (const auto& row : r.rows) {
    out += format_fixed(row.gamma, 3) + ',' + fixed(row.bleu) + ',' + fixed(row.al) + '\n';
  }
  return out;
}

std::string train_log_csv(const TrainLog& log, bool mrt) {
  std::string out = mrt ? "epoch,mean_risk,val_ce,mean_cand_bleu,mean_cand_al\n"
                        : "epoch,mean_ce,val_ce,mean_cand_bleu,mean_cand_al\n";
  auto cell = [](double v) { return std::isnan(v) ? std::string() : fixed(v); };
  for (const auto& e : log.epochs) {
    out += std::to_string(e.epoch) + ',' + cell(mrt ? e.mean_risk : e.train_ce) + ',' + cell(e.val_ce) + ',';
    out += mrt ? fixed(e.mean_cand_bleu) + ',' + fixed(e.mean_cand_al) : std::string(",");
    out += '\n';
  }
  return out;
}

KeyValues decision_metadata() {
  return {
      {"decision.al_tau", "first step reading the full source; |u| if none"},
      {"decision.al_rate", "hypothesis length over source length"},
      {"decision.latency_tokens", "content tokens; eos-only hypothesis counts as length 1"},
      {"decision.bleu_sentence_smoothing", "add-one on orders >= 2 when any count is zero"},
      {"decision.bleu_scale", "x100 in CSV"},
      {"decision.beam_length_norm", "total log-prob divided by length"},
      {"decision.candidate_dedup", "keep highest-scoring copy"},
      {"decision.mrt_candidates", "regenerated every batch"},
      {"decision.multipath_granularity", "one lag per batch"},
  };
}

void write_csv_with_meta(const std::string& path, const std::string& csv, const KeyValues& metadata) {
  write_text_file(path, csv);
  KeyValues meta = decision_metadata();
  merge(meta, metadata);
  write_text_file(path + ".meta", to_kv_text(meta));
}

}  // namespace simt
