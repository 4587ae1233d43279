#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "simt/error.hpp"
#include "simt/metrics.hpp"
#include "simt/random.hpp"

using namespace simt;

TEST_CASE("AL closed form and spot value") {
  for (int k = 1; k <= 9; ++k) {
    for (int n = k; n <= 50; ++n) {
      const auto g = make_g_trace(PolicySpec::wait_k(k), n, n);
      CHECK(average_lagging(g, n, n) == static_cast<double>(k));
    }
  }
  CHECK(average_lagging(GTrace{2, 3, 4, 5}, 6, 4) == 1.25);
}

TEST_CASE("AL tau stops at the first full read") {
  // Steps after the first full read do not count.
  CHECK(average_lagging(GTrace{3, 3, 3}, 3, 3) == 3.0);
  CHECK(average_lagging(GTrace{1, 3, 3}, 3, 3) == doctest::Approx((1.0 + 2.0) / 2.0));
  CHECK_THROWS_AS(average_lagging(GTrace{1, 2}, 3, 3), ShapeError);
  CHECK_THROWS_AS(average_lagging(GTrace{2, 1, 3}, 3, 3), ShapeError);
}

TEST_CASE("sentence BLEU edge cases") {
  const std::vector<int> ref{4, 5, 6, 7, 8};
  CHECK(sentence_bleu(ref, ref) == doctest::Approx(1.0));
  CHECK(sentence_bleu(ref, {}) == 0.0);
  CHECK(sentence_bleu(ref, std::vector<int>{9, 9, 9}) == 0.0);
  const double short_hyp = sentence_bleu(ref, std::vector<int>{4, 5});
  CHECK(short_hyp > 0.0);
  CHECK(short_hyp < 1.0);
  CHECK_THROWS_AS(sentence_bleu(std::vector<int>{}, ref), ConfigError);
}

TEST_CASE("sentence BLEU matches the brute-force oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 500; ++trial) {
    const auto ref = oracle::random_sentence(rng, 4 + rng.between(1, 6), rng.between(1, 12));
    const auto hyp = oracle::random_sentence(rng, 4 + rng.between(1, 6), rng.between(0, 12));
    CHECK(sentence_bleu(ref, hyp) == doctest::Approx(oracle::brute_bleu(ref, hyp)).epsilon(1e-12));
  }
}

TEST_CASE("corpus BLEU aggregates counts") {
  std::vector<BleuPair> pairs{{{4, 5, 6, 7}, {4, 5, 6, 7}}, {{4, 5, 6, 7, 8}, {4, 5, 6, 7, 8}}};
  CHECK(corpus_bleu(pairs) == doctest::Approx(1.0));
  pairs.push_back({{4, 5, 6, 7}, {9}});
  const double b = corpus_bleu(pairs);
  CHECK(b < 1.0);
  CHECK(b > 0.0);
  CHECK(corpus_bleu(std::vector<BleuPair>{{{4, 5}, {6, 7}}}) == 0.0);
}

TEST_CASE("correlations") {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8}, z{8, 6, 4, 2};
  CHECK(pearson_abs(x, y) == doctest::Approx(1.0));
  CHECK(pearson_abs(x, z) == doctest::Approx(1.0));
  CHECK(spearman(x, z) == doctest::Approx(-1.0));
  CHECK(spearman(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 2, 3, 4}) ==
        doctest::Approx(0.9486832980505138));
  CHECK_THROWS_AS(pearson_abs(x, std::vector<double>{1, 1, 1, 1}), NumericError);
}

TEST_CASE("documented metric examples") {
  CHECK(average_lagging(GTrace{4, 4, 4}, 4, 3) == 4.0);
  const std::vector<int> y{4, 5, 6, 7}, u{4, 5, 6};
  CHECK(sentence_bleu(y, u) == doctest::Approx(oracle::brute_bleu(y, u)).epsilon(1e-12));

  const std::vector<int> ref{4, 5, 6, 7, 8, 9}, hyp{4, 5, 6, 7, 8, 10};
  CHECK(corpus_bleu(std::vector<BleuPair>{{ref, hyp}}) == doctest::Approx(sentence_bleu(ref, hyp)).epsilon(1e-12));
  const std::vector<BleuPair> ab{{ref, hyp}, {{4, 5, 6, 7, 8}, {4, 5, 6, 7, 9, 9}}};
  const std::vector<BleuPair> ba{ab[1], ab[0]};
  CHECK(corpus_bleu(ab) == corpus_bleu(ba));

  const std::vector<double> x{1, 2, 3, 5};
  std::vector<double> y2, y3;
  for (double v : x) {
    y2.push_back(2 * v);
    y3.push_back(-3 * v + 1);
  }
  CHECK(pearson_abs(x, y2) == doctest::Approx(1.0));
  CHECK(pearson_abs(x, y3) == doctest::Approx(1.0));
  CHECK_THROWS_WITH_AS(pearson_abs(x, std::vector<double>(4, 2.0)), doctest::Contains("zero variance"), NumericError);
}
