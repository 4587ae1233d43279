#include <doctest.h>

#include "simt/error.hpp"
#include "simt/policy.hpp"

using namespace simt;

TEST_CASE("wait-k lag schedule") {
  const auto g = make_g_trace(PolicySpec::wait_k(3), 5, 6);
  CHECK(g == GTrace{3, 4, 5, 5, 5, 5});
  CHECK(make_g_trace(PolicySpec::wait_k(9), 4, 2) == GTrace{4, 4});
  CHECK(waitk_lag(1, 1, 10) == 1);
  CHECK(waitk_lag(2'000'000'000, 2'000'000'000, 7) == 7);
  CHECK_THROWS_AS(PolicySpec::wait_k(0), ConfigError);
}

TEST_CASE("wait-k traces are valid for every k and length") {
  for (int k = 1; k <= 9; ++k) {
    for (int n = 1; n <= 20; ++n) {
      const auto g = make_g_trace(PolicySpec::wait_k(k), n, n + 3);
      CHECK_FALSE(validate_g_trace(g, n).has_value());
      CHECK(g.front() == std::min(k, n));
      CHECK(g.back() <= n);
    }
  }
}

TEST_CASE("trace validation names the violation") {
  CHECK(validate_g_trace(GTrace{0, 1}, 3).value().find("g(1)") != std::string::npos);
  CHECK(validate_g_trace(GTrace{2, 1}, 3).value().find("non-monotone") != std::string::npos);
  CHECK(validate_g_trace(GTrace{1, 4}, 3).value().find("exceeds") != std::string::npos);
  CHECK_THROWS_AS(require_valid_g_trace(GTrace{3, 2}, 3), ShapeError);
}

TEST_CASE("trace text round trip") {
  const GTrace g{1, 2, 2, 5};
  CHECK(format_g_trace(g) == "1 2 2 5");
  CHECK(parse_g_trace("1 2 2 5") == g);
  CHECK_THROWS(parse_g_trace("1 x"));
}

TEST_CASE("documented lag examples") {
  CHECK(waitk_lag(1, 3, 5) == 3);
  CHECK(waitk_lag(4, 3, 5) == 5);
  CHECK(waitk_lag(2, 1, 10) == 2);
  CHECK(make_g_trace(PolicySpec::wait_k(3), 5, 5) == GTrace{3, 4, 5, 5, 5});
  CHECK(make_g_trace(PolicySpec::wait_k(1), 2, 4) == GTrace{1, 2, 2, 2});
  CHECK(make_g_trace(PolicySpec::wait_k(9), 4, 6) == GTrace(6, 4));
  CHECK_FALSE(validate_g_trace(GTrace{1, 2, 3}, 3).has_value());
  CHECK(validate_g_trace(GTrace{2, 1}, 3).value() == "non-monotone at i=2");
  CHECK(validate_g_trace(GTrace{0, 1}, 3).value() == "g(1) < 1");
}
