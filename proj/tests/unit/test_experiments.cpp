#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "simt/error.hpp"
#include "simt/experiments.hpp"
#include "simt/kvtext.hpp"

using namespace simt;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.task.vocab_size = 6;
  c.task.min_len = 3;
  c.task.max_len = 6;
  c.task.size = 60;
  c.valid_size = 12;
  c.model = oracle::tiny_config(0, 0, 16);
  c.ce.epochs = 2;
  c.ce.batch_size = 16;
  c.mrt.epochs = 1;
  c.mrt.batch_size = 16;
  c.mrt.n = 2;
  c.train_ks = {1, 2};
  c.test_ks = {1, 2};
  c.gammas = {0.0, 0.5};
  return c;
}

}  // namespace

TEST_CASE("experiment config hashing") {
  const auto a = small_config();
  auto b = a;
  CHECK(a.hash() == b.hash());
  b.output_dir = "/elsewhere";
  CHECK(a.hash() == b.hash());
  b.ce.seed = 99;
  CHECK(a.hash() != b.hash());
  b = a;
  b.test_ks = {};
  CHECK_THROWS_AS(b.validate(), ConfigError);
  b = a;
  b.metric = "ter";
  CHECK_THROWS_AS(b.validate(), ConfigError);
}

TEST_CASE("data preparation") {
  auto c = small_config();
  const auto d = prepare_data(c);
  CHECK(d.train.size() == 60);
  CHECK(d.valid.size() == 12);
  CHECK(d.eval.size() == 12);
  c.eval_split = "train";
  const auto t = prepare_data(c);
  CHECK(t.eval.size() == 12);
  const auto mc = sized_model_config(c, d);
  CHECK(mc.src_vocab == static_cast<int>(d.src_vocab.size()));
  c.model.max_len = 4;
  CHECK_THROWS_AS(sized_model_config(c, d), ConfigError);
}

TEST_CASE("grid has every cell, marks the diagonal, and is reproducible") {
  const auto c = small_config();
  const auto data = prepare_data(c);
  const auto g = run_grid(c, data);
  CHECK(g.rows.size() == 4);
  int diag = 0;
  for (const auto& r : g.rows) diag += r.diagonal ? 1 : 0;
  CHECK(diag == 2);
  CHECK(g.columns.size() == 2);
  for (const auto& col : g.columns) {
    CHECK(col.diagonal_ce_rank >= 1);
    CHECK(col.diagonal_ce_rank <= 2);
  }
  const std::string csv = grid_csv(g);
  CHECK(csv.rfind("train_mode,train_k,test_k,bleu,al,ce_loss,diagonal\n", 0) == 0);
  CHECK(grid_csv(run_grid(c, data)) == csv);
}

TEST_CASE("correlation subsets partition the corpus") {
  const std::vector<double> loss{1, 2, 3, 4, 5, 6}, bleu{0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
  const auto rows = correlation_from_scores(3, loss, bleu);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].subset == "Entire");
  CHECK(rows[1].size + rows[2].size == rows[0].size);
  for (const auto& r : rows) CHECK(r.abs_pearson.value() == doctest::Approx(1.0));
  const auto degenerate = correlation_from_scores(1, std::vector<double>{1, 1, 5}, std::vector<double>{0.1, 0.2, 0.3});
  CHECK_FALSE(degenerate[2].abs_pearson.has_value());
  CHECK(correlation_csv(degenerate).find("undefined") != std::string::npos);
}

TEST_CASE("prefix bias harness") {
  const auto c = small_config();
  const auto data = prepare_data(c);
  const Model m = init_model(sized_model_config(c, data), 1);
  std::vector<EncodedPair> bucket;
  for (const auto& p : data.train) {
    if (p.target.size() == 4) bucket.push_back(p);
  }
  REQUIRE(bucket.size() >= 3);
  const auto rep = prefix_bias_report(m, m, bucket, 2);
  CHECK(rep.rows.size() == 4);
  CHECK(rep.rows[0].bleu_a == rep.rows[0].bleu_b);
  double tf = 0.0;
  for (const auto& p : bucket) tf += teacher_forced_correct(m, PolicySpec::wait_k(2), p.source, p.target, 4) ? 1 : 0;
  CHECK(rep.rows.back().acc_a == tf / static_cast<double>(bucket.size()));
  CHECK_THROWS_AS(prefix_bias_report(m, m, {}, 2), ConfigError);
  for (const auto& p : data.train) {
    if (p.target.size() != 4) {
      bucket.push_back(p);
      break;
    }
  }
  CHECK_THROWS_AS(prefix_bias_report(m, m, bucket, 2), ConfigError);
}

TEST_CASE("curves and gamma sweep") {
  auto c = small_config();
  const auto data = prepare_data(c);
  const auto rows = run_curve(c, data);
  CHECK(rows.size() == 10);
  CHECK(std::is_sorted(rows.begin(), rows.end(), [](const CurveRow& a, const CurveRow& b) {
    return a.label != b.label ? a.label < b.label : a.test_k < b.test_k;
  }));
  const Model stage1 = init_model(sized_model_config(c, data), 1);
  const auto sweep = gamma_sweep(stage1, data.train, data.eval, c.gammas, 1, c.mrt);
  CHECK(sweep.rows.size() == 2);
  CHECK(gamma_csv(sweep).rfind("gamma,bleu,al\n", 0) == 0);
}

TEST_CASE("CSV sidecars carry metadata") {
  const auto path = (std::filesystem::temp_directory_path() / "simt_exp.csv").string();
  write_csv_with_meta(path, "a,b\n1,2\n", {{"config_hash", "abc"}});
  CHECK(read_text_file(path) == "a,b\n1,2\n");
  const auto meta = parse_kv_text(read_text_file(path + ".meta"));
  CHECK(meta.at("config_hash") == "abc");
  CHECK(meta.count("decision.al_tau") == 1);
}
