#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "simt/error.hpp"
#include "simt/kvtext.hpp"
#include "simt/model.hpp"
#include "simt/optim.hpp"
#include "simt/transformer.hpp"

using namespace simt;

namespace {

std::uint32_t read_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(s[at + static_cast<std::size_t>(b)]);
  return v;
}

}  // namespace

TEST_CASE("model config validation and kv round trip") {
  ModelConfig c = oracle::tiny_config();
  CHECK_NOTHROW(c.validate());
  CHECK(ModelConfig::from_kv(c.to_kv()) == c);
  ModelConfig bad = c;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.tgt_vocab = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("initialisation is seeded") {
  const auto c = oracle::tiny_config();
  const Model a = init_model(c, 1), b = init_model(c, 1), d = init_model(c, 2);
  CHECK(bitwise_equal(a.params(), b.params()));
  CHECK_FALSE(bitwise_equal(a.params(), d.params()));
  const auto& p = a.params();
  CHECK(p.name(0) == "src_embed");
  CHECK(p[p.index("out.weight")].rows() == c.tgt_vocab);
  CHECK(p[p.index("dec.norm.gain")].isOnes());
  CHECK(p.scalar_count() < 5000);
}

TEST_CASE("checkpoint layout") {
  const Model m = init_model(oracle::tiny_config(), 3);
  const std::string bytes = serialize_checkpoint(m);
  REQUIRE(bytes.substr(0, 9) == "SIMTCKPT1");
  const auto cfg_len = read_u32(bytes, 9);
  const std::string cfg = bytes.substr(13, cfg_len);
  CHECK(cfg == to_kv_text(m.config().to_kv()));
  std::size_t at = 13 + cfg_len;
  CHECK(read_u32(bytes, at) == m.params().size());
  at += 4;
  const auto name_len = read_u32(bytes, at);
  CHECK(bytes.substr(at + 4, name_len) == "src_embed");
  at += 4 + name_len;
  CHECK(read_u32(bytes, at) == 2);
  CHECK(read_u32(bytes, at + 4) == static_cast<std::uint32_t>(m.config().src_vocab));
  CHECK(read_u32(bytes, at + 8) == static_cast<std::uint32_t>(m.config().d_model));
  double first = 0.0;
  std::memcpy(&first, bytes.data() + at + 12, 8);
  CHECK(first == m.params()[0](0, 0));
  double second = 0.0;
  std::memcpy(&second, bytes.data() + at + 20, 8);
  CHECK(second == m.params()[0](0, 1));
}

TEST_CASE("checkpoint round trip is bit exact") {
  const Model m = init_model(oracle::tiny_config(), 3);
  const Model back = deserialize_checkpoint(serialize_checkpoint(m));
  CHECK(back.config() == m.config());
  CHECK(bitwise_equal(back.params(), m.params()));
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(m));

  const auto path = (std::filesystem::temp_directory_path() / "simt_model_test.ckpt").string();
  save_checkpoint(m, path);
  CHECK(bitwise_equal(load_checkpoint(path).params(), m.params()));
  CHECK_NOTHROW(load_checkpoint(path, m.config()));
  ModelConfig other = m.config();
  other.d_ffn = 32;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, other), doctest::Contains("'d_ffn'"), ConfigError);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const std::string bytes = serialize_checkpoint(init_model(oracle::tiny_config(6, 6, 4), 3));
  for (std::size_t n = 0; n < bytes.size(); n += 7) {
    CHECK_THROWS_AS(deserialize_checkpoint(std::string_view(bytes).substr(0, n)), CorruptionError);
  }
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), CorruptionError);
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bytes + "x"), doctest::Contains("trailing"), CorruptionError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad), doctest::Contains("magic"), CorruptionError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt"), CorruptionError);
}

TEST_CASE("encoder is unidirectional") {
  const Model m = init_model(oracle::tiny_config(), 5);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = oracle::random_sentence(rng, 9, 7);
    const Matrix before = encoder_states(m, x);
    const int j = rng.between(1, 6);
    auto y = x;
    for (int t = j; t < 7; ++t) y[static_cast<std::size_t>(t)] = rng.between(4, 8);
    const Matrix after = encoder_states(m, y);
    CHECK(before.topRows(j) == after.topRows(j));
  }
}

TEST_CASE("graph and incremental paths agree") {
  const Model m = init_model(oracle::tiny_config(), 5);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = oracle::random_sentence(rng, 9, 6);
    const auto u = oracle::random_sentence(rng, 8, 5);
    const auto g = make_g_trace(PolicySpec::wait_k(rng.between(1, 4)), 6, 5);
    std::vector<int> input{Vocabulary::kBos};
    input.insert(input.end(), u.begin(), u.end() - 1);
    const Matrix probs = teacher_forced_probs(m, x, input, g);

    IncrementalDecoder dec(m, x);
    auto state = dec.start();
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Eigen::VectorXd lp = dec.step(state, input[i], g[i]);
      for (int t = 0; t < lp.size(); ++t) CHECK(std::exp(lp(t)) == doctest::Approx(probs(i, t)).epsilon(1e-10));
    }
    const auto score = sequence_log_prob(m, x, u, g);
    double total = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) total += std::log(probs(i, u[i]));
    CHECK(score.total == doctest::Approx(total).epsilon(1e-10));
  }
}

TEST_CASE("CE loss gradient matches finite differences") {
  const Model m = init_model(oracle::tiny_config(), 9);
  std::vector<EncodedPair> data{{{4, 5, 6, 7}, {5, 6, 4}}, {{8, 7, 6}, {7, 7, 5, 4}}};
  const auto batches = make_batches(data, 2, 1);
  const std::vector<int> ks{1, 2};
  const LossClosure loss = [&](ParamBinding& b) { return ce_prefix_loss_graph(b, batches[0], ks); };
  const auto analytic = gradient(m, loss);
  CHECK(analytic.loss == doctest::Approx(ce_prefix_loss(m, batches[0], ks)).epsilon(1e-12));
  const auto fd = oracle::finite_difference(m, loss, 1e-5);
  CHECK(oracle::max_relative_error(analytic.grads, fd) < 1e-4);
}

TEST_CASE("Adam minimises a quadratic") {
  Model m = init_model(oracle::tiny_config(), 4);
  const std::size_t slot = m.params().index("out.bias");
  Matrix target = Matrix::Constant(1, m.config().tgt_vocab, 0.7);
  const LossClosure loss = [&](ParamBinding& b) {
    ad::Var d = ad::add(b[slot], b.tape().constant(-target));
    return ad::sum(ad::matmul_nt(d, d));
  };
  AdamState state;
  AdamConfig cfg;
  cfg.lr = 0.05;
  const double start = evaluate_loss(m, loss);
  for (int i = 0; i < 300; ++i) apply_update(m.params(), gradient(m, loss).grads, state, cfg);
  CHECK(evaluate_loss(m, loss) < 1e-4 * start);
  CHECK(state.step == 300);
  Gradients wrong(1);
  CHECK_THROWS_AS(apply_update(m.params(), wrong, state, cfg), ShapeError);
}

TEST_CASE("non-finite loss is reported") {
  const Model m = init_model(oracle::tiny_config(), 4);
  const LossClosure loss = [](ParamBinding& b) {
    return b.tape().constant(Matrix::Constant(1, 1, std::numeric_limits<double>::infinity()));
  };
  CHECK_THROWS_AS(gradient(m, loss), NumericError);
}

TEST_CASE("next-token distribution properties") {
  const Model m = init_model(oracle::tiny_config(), 5);
  const std::vector<int> x{4, 5, 6, 7}, prefix{Vocabulary::kBos, 5};
  const Eigen::VectorXd p = next_token_distribution(m, x, 2, prefix);
  CHECK(std::abs(p.sum() - 1.0) < 1e-9);
  CHECK_THROWS(next_token_distribution(m, x, 0, prefix));
  CHECK_THROWS(next_token_distribution(m, x, 5, prefix));

  // g = |x| is full-sentence conditioning.
  const std::vector<int> input{Vocabulary::kBos, 5, 6};
  const Matrix full = teacher_forced_probs(m, x, input, {});
  const Matrix sat = teacher_forced_probs(m, x, input, GTrace{4, 4, 4});
  CHECK((full - sat).cwiseAbs().maxCoeff() < 1e-14);

  const auto one = sequence_log_prob(m, x, std::vector<int>{5}, GTrace{1});
  const double uniform = -std::log(static_cast<double>(m.config().tgt_vocab));
  CHECK(one.total <= 0.0);
  CHECK(std::abs(one.total - uniform) < 2.0);
  CHECK_THROWS(sequence_log_prob(m, x, std::vector<int>{5, 6}, GTrace{1}));
}

TEST_CASE("prefix CE loss examples") {
  const Model m = init_model(oracle::tiny_config(), 6);
  std::vector<EncodedPair> data{{{4, 5, 6}, {5, 6}}, {{7, 8}, {4, 5, 6}}};
  const auto batch = make_batches(data, 2, 1).front();
  const double big_k = ce_prefix_loss(m, batch, std::vector<int>{9, 9});
  double full = 0.0;
  long tokens = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto& p = data[batch.indices[r]];
    std::vector<int> input{Vocabulary::kBos};
    input.insert(input.end(), p.target.begin(), p.target.end());
    const Matrix probs = teacher_forced_probs(m, p.source, input, {});
    for (std::size_t i = 0; i < input.size(); ++i) {
      const int next = i + 1 < input.size() ? input[i + 1] : Vocabulary::kEos;
      full -= std::log(probs(static_cast<Eigen::Index>(i), next));
      ++tokens;
    }
  }
  CHECK(big_k == doctest::Approx(full / static_cast<double>(tokens)).epsilon(1e-12));
  CHECK(ce_prefix_loss(m, batch, std::vector<int>{1, 1}) >= 0.0);
}

TEST_CASE("loss decreases over 200 steps on a toy corpus") {
  SyntheticTaskSpec spec;
  spec.vocab_size = 5;
  spec.min_len = 3;
  spec.max_len = 5;
  spec.size = 50;
  const auto corpus = generate_synthetic(spec, 2);
  const auto data =
      encode_corpus(corpus, build_vocab(corpus, VocabSide::source), build_vocab(corpus, VocabSide::target));
  Model m = init_model(oracle::tiny_config(9, 9, 8), 1);
  const auto batch = make_batches(data, 50, 1).front();
  const std::vector<int> ks(50, 2);
  const LossClosure loss = [&](ParamBinding& b) { return ce_prefix_loss_graph(b, batch, ks); };
  AdamState state;
  AdamConfig cfg;
  cfg.lr = 5e-3;
  const double start = evaluate_loss(m, loss);
  for (int step = 0; step < 200; ++step) apply_update(m.params(), gradient(m, loss).grads, state, cfg);
  CHECK(evaluate_loss(m, loss) < 0.7 * start);
}

TEST_CASE("gradient and update edge cases") {
  const Model m = init_model(oracle::tiny_config(), 4);
  const LossClosure constant = [](ParamBinding& b) { return b.tape().constant(Matrix::Constant(1, 1, 3.0)); };
  const auto g = gradient(m, constant);
  REQUIRE(g.grads.size() == m.params().size());
  for (std::size_t i = 0; i < g.grads.size(); ++i) {
    CHECK(g.grads[i].rows() == m.params()[i].rows());
    CHECK(g.grads[i].cols() == m.params()[i].cols());
    CHECK(g.grads[i].isZero(0.0));
  }
  Model a = m, b = m;
  AdamState sa, sb;
  apply_update(a.params(), g.grads, sa, {});
  CHECK(bitwise_equal(a.params(), m.params()));
  CHECK(sa.step == 1);
  const LossClosure real = [](ParamBinding& bind) { return ad::sum(ad::exp(bind[0])); };
  apply_update(a.params(), gradient(a, real).grads, sa, {});
  apply_update(b.params(), gradient(b, real).grads, sb, {});
  sb.step = sa.step;
  CHECK_FALSE(bitwise_equal(a.params(), m.params()));
}
