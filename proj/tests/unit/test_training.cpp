#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "simt/error.hpp"
#include "simt/metrics.hpp"
#include "simt/training.hpp"

using namespace simt;

namespace {

std::vector<EncodedPair> toy_data(int n, std::uint64_t seed) {
  SyntheticTaskSpec spec;
  spec.vocab_size = 4;
  spec.min_len = 3;
  spec.max_len = 5;
  spec.size = n;
  const auto corpus = generate_synthetic(spec, seed);
  return encode_corpus(corpus, build_vocab(corpus, VocabSide::source), build_vocab(corpus, VocabSide::target));
}

Hypothesis make_hyp(std::vector<int> tokens, int k, int src_len) {
  Hypothesis h;
  h.tokens = std::move(tokens);
  h.g_trace = make_g_trace(PolicySpec::wait_k(k), src_len, static_cast<int>(h.tokens.size()));
  return h;
}

}  // namespace

TEST_CASE("expected cost is a convex combination") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.between(1, 8);
    std::vector<double> lp(n), cost(n);
    for (int i = 0; i < n; ++i) {
      lp[i] = rng.uniform(-30.0, 0.0);
      cost[i] = rng.uniform(0.0, 3.0);
    }
    const double r = expected_cost(lp, cost);
    CHECK(r >= *std::min_element(cost.begin(), cost.end()) - 1e-12);
    CHECK(r <= *std::max_element(cost.begin(), cost.end()) + 1e-12);
    auto shifted = lp;
    for (auto& v : shifted) v -= 123.0;
    CHECK(expected_cost(shifted, cost) == doctest::Approx(r).epsilon(1e-12));
  }
  CHECK(expected_cost(std::vector<double>{-1.0, -1.0}, std::vector<double>{0.0, 1.0}) == doctest::Approx(0.5));
  CHECK(expected_cost(std::vector<double>{0.0, -1.0}, std::vector<double>{0.0, 1.0}, 50.0) < 1e-20);
}

TEST_CASE("cost reduces to BLEU and AL terms at the gamma extremes") {
  const std::vector<int> x{4, 5, 6, 7}, y{5, 6, 7, 8};
  const auto h = make_hyp({5, 6, 9, Vocabulary::kEos}, 2, 4);
  const double bleu = sentence_bleu(y, h.content());
  const double al = hypothesis_al(h, 4);
  CHECK(mrt_cost(x, y, h, 0.0) == doctest::Approx(1.0 - bleu));
  CHECK(mrt_cost(x, y, h, 1.0) == doctest::Approx(al));
  CHECK(mrt_cost(x, y, h, 0.4) == doctest::Approx(0.4 * al + 0.6 * (1.0 - bleu)));
  CHECK(mrt_cost(x, y, h, 1.0, {true}) == doctest::Approx(al / 4.0));
  CHECK(al == doctest::Approx(average_lagging(GTrace{2, 3, 4}, 4, 3)));
}

TEST_CASE("differentiable risk matches the closed form and its gradient") {
  const Model m = init_model(oracle::tiny_config(), 21);
  const std::vector<int> x{4, 5, 6}, y{5, 6, 7};
  std::vector<Hypothesis> cands{make_hyp({5, 6, Vocabulary::kEos}, 1, 3), make_hyp({7, Vocabulary::kEos}, 1, 3),
                                make_hyp({5, 5, 5, 6}, 1, 3)};
  std::vector<double> lp, costs;
  for (const auto& c : cands) {
    lp.push_back(sequence_log_prob(m, x, c.tokens, c.g_trace).total);
    costs.push_back(mrt_cost(x, y, c, 0.4));
  }
  CHECK(mrt_risk(m, x, y, cands, 0.4) == doctest::Approx(expected_cost(lp, costs)).epsilon(1e-12));
  const auto check = gradient_check(m, x, y, cands, 0.4, 1e-5);
  CHECK(check.checked == m.params().scalar_count());
  CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("CE training lowers the loss and is deterministic") {
  const auto data = toy_data(64, 3);
  const auto mc = [&] {
    auto c = oracle::tiny_config(static_cast<int>(8), static_cast<int>(8), 8);
    return c;
  }();
  CeTrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.adam.lr = 1e-2;
  Model a = init_model(mc, 1), b = init_model(mc, 1);
  const double before = corpus_ce(a, data, 2);
  const auto log = train_ce(a, data, 2, cfg, data);
  train_ce(b, data, 2, cfg, data);
  CHECK(log.epochs.size() == 6);
  CHECK(log.epochs.back().val_ce < before);
  CHECK(log.epochs.back().train_ce < log.epochs.front().train_ce);
  CHECK(bitwise_equal(a.params(), b.params()));
}

TEST_CASE("multipath lags are drawn uniformly per batch") {
  const auto data = toy_data(40, 5);
  Model m = init_model(oracle::tiny_config(8, 8, 8), 1);
  CeTrainConfig cfg;
  cfg.mode = CeMode::multipath;
  cfg.epochs = 50;
  cfg.batch_size = 4;
  cfg.adam.lr = 0.0;
  const auto log = train_ce(m, data, 1, cfg);
  REQUIRE(log.batch_lags.size() == 500);
  std::map<int, int> counts;
  for (int k : log.batch_lags) ++counts[k];
  CHECK(counts.size() == 5);
  double chi2 = 0.0;
  for (int k : cfg.k_set) chi2 += std::pow(counts[k] - 100.0, 2) / 100.0;
  CHECK(chi2 < 18.47);  // p = 0.001, 4 dof
}

TEST_CASE("consistent and inconsistent lags") {
  const auto data = toy_data(8, 5);
  Model m = init_model(oracle::tiny_config(8, 8, 8), 1);
  CeTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  auto log = train_ce(m, data, 3, cfg);
  CHECK(log.batch_lags == std::vector<int>{3, 3});
  cfg.mode = CeMode::inconsistent;
  cfg.train_k = 5;
  log = train_ce(m, data, 3, cfg);
  CHECK(log.batch_lags == std::vector<int>{5, 5});
  CHECK(log.warnings.empty());
  log = train_ce(m, data, 5, cfg);
  CHECK(log.warnings.size() == 1);
}

TEST_CASE("MRT fine-tuning logs candidates and is deterministic") {
  const auto data = toy_data(16, 7);
  const Model base = init_model(oracle::tiny_config(8, 8, 12), 2);
  MrtConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.n = 3;
  Model a = base, b = base;
  const auto log = finetune_mrt(a, data, 2, cfg, data);
  finetune_mrt(b, data, 2, cfg);
  REQUIRE(log.epochs.size() == 2);
  CHECK(log.epochs[0].candidates_generated > 0);
  CHECK(log.epochs[0].mean_risk >= 0.0);
  CHECK(std::isfinite(log.epochs[1].val_ce));
  CHECK(bitwise_equal(a.params(), b.params()));
  CHECK_FALSE(bitwise_equal(a.params(), base.params()));
}

TEST_CASE("training config validation") {
  CeTrainConfig ce;
  ce.batch_size = 0;
  CHECK_THROWS_AS(ce.validate(), ConfigError);
  ce = {};
  ce.mode = CeMode::multipath;
  ce.k_set = {};
  CHECK_THROWS_AS(ce.validate(), ConfigError);
  MrtConfig mrt;
  mrt.gamma = 1.5;
  CHECK_THROWS_AS(mrt.validate(), ConfigError);
  CHECK(parse_ce_mode("multipath") == CeMode::multipath);
  CHECK_THROWS_AS(parse_ce_mode("x"), ConfigError);
}

TEST_CASE("documented risk examples") {
  CHECK(expected_cost(std::vector<double>{-2.5}, std::vector<double>{0.7}) == doctest::Approx(0.7));
  CHECK(expected_cost(std::vector<double>{-1.0, -1.0}, std::vector<double>{0.2, 0.4}) == doctest::Approx(0.3));
  CHECK_THROWS(expected_cost(std::vector<double>{}, std::vector<double>{}));

  const std::vector<int> y{5, 6, 7};
  const Hypothesis exact = make_hyp(y, 1, 3);
  CHECK(mrt_cost(y, y, exact, 0.4) == doctest::Approx(0.4 * 1.0));

  const Model m = init_model(oracle::tiny_config(), 22);
  const std::vector<int> x{4, 5, 6};
  std::vector<Hypothesis> one{make_hyp({5, 6, Vocabulary::kEos}, 1, 3)};
  CHECK(mrt_risk(m, x, y, one, 0.4) == doctest::Approx(mrt_cost(x, y, one[0], 0.4)).epsilon(1e-12));
  CHECK_THROWS(mrt_risk(m, x, y, std::vector<Hypothesis>{}, 0.4));
  const std::vector<double> costs{mrt_cost(x, y, one[0], 0.4)};
  const auto g = gradient(m, [&](ParamBinding& b) { return mrt_risk_graph(b, encode_graph(b, x), one, costs); });
  for (const auto& t : g.grads) CHECK(t.cwiseAbs().maxCoeff() < 1e-12);
}
