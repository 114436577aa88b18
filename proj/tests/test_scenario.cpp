#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <random>

#include "nerb/scenario.hpp"

using namespace nerb;
using Catch::Approx;

namespace {

// Path enumeration oracle: every sequence of +-sqrt(dt) increments with
// probability 2^-m. Returns (B_T, weight) grouped by terminal value.
std::map<long, double> enumerate_terminal(std::size_t m) {
  std::map<long, double> out;
  const double w = std::ldexp(1.0, -static_cast<int>(m));
  for (unsigned long mask = 0; mask < (1ul << m); ++mask) {
    long ups = 0;
    for (std::size_t k = 0; k < m; ++k) ups += (mask >> k) & 1ul ? 1 : -1;
    out[ups] += w;
  }
  return out;
}

}  // namespace

TEST_CASE("time grid pins the horizon") {
  TimeGrid g(1.0, 3);
  CHECK(g.time(0) == 0.0);
  CHECK(g.time(3) == 1.0);
  CHECK(g.dt() * 3 == Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(TimeGrid(1.0, 0), InvalidInput);
  CHECK_THROWS_AS(TimeGrid(-1.0, 4), InvalidInput);
}

TEST_CASE("one-step tree") {
  auto s = build_scenarios(TimeGrid(1.0, 1), Backend::tree);
  REQUIRE(s.support_size(0) == 1);
  REQUIRE(s.support_size(1) == 2);
  CHECK(s.brownian(0)[0] == 0.0);
  CHECK(s.brownian(1)[0] == Approx(1.0));
  CHECK(s.brownian(1)[1] == Approx(-1.0));
}

TEST_CASE("two-step tree matches enumeration of increment sequences") {
  auto s = build_scenarios(TimeGrid(1.0, 2), Backend::tree);
  const auto oracle = enumerate_terminal(2);
  const double sq = std::sqrt(0.5);
  auto b = s.brownian(2);
  auto p = s.probabilities(2);
  REQUIRE(b.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    const long ups = std::lround(b[j] / sq);
    REQUIRE(oracle.count(ups));
    CHECK(p[j] == Approx(oracle.at(ups)));
  }
  CHECK(b[0] == Approx(2 * sq));
  CHECK(b[1] == Approx(0.0).margin(1e-15));
  CHECK(p[0] == 0.25);
  CHECK(p[1] == 0.5);
}

TEST_CASE("tree levels recombine and probabilities sum to one") {
  for (std::size_t m : {1, 5, 17, 64}) {
    auto s = build_scenarios(TimeGrid(2.0, m), Backend::tree);
    for (std::size_t i = 0; i <= m; ++i) {
      REQUIRE(s.support_size(i) == i + 1);
      double total = 0.0;
      for (double v : s.probabilities(i)) total += v;
      CHECK(total == Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("terminal distribution on larger trees matches enumeration") {
  const std::size_t m = 12;
  auto s = build_scenarios(TimeGrid(1.0, m), Backend::tree);
  const auto oracle = enumerate_terminal(m);
  const double sq = std::sqrt(s.grid().dt());
  auto b = s.brownian(m);
  auto p = s.probabilities(m);
  for (std::size_t j = 0; j <= m; ++j) CHECK(p[j] == Approx(oracle.at(std::lround(b[j] / sq))));
}

TEST_CASE("expect examples") {
  for (std::size_t m : {1, 2, 7, 40}) {
    auto s = build_scenarios(TimeGrid(1.0, m), Backend::tree);
    CHECK(expect(s, s.brownian_rv(m)) == Approx(0.0).margin(1e-13));
    auto sq = s.from_brownian(m, [](double b) { return b * b; });
    CHECK(expect(s, sq) == Approx(1.0).epsilon(1e-13));
    CHECK(expect(s, s.constant(m, 3.5)) == Approx(3.5));
  }
}

TEST_CASE("cond_expect examples") {
  auto s = build_scenarios(TimeGrid(1.0, 9), Backend::tree);
  const auto bt = s.brownian_rv(9);
  for (std::size_t i = 0; i <= 9; ++i) {
    auto c = cond_expect(s, bt, i);
    auto b = s.brownian(i);
    for (std::size_t k = 0; k < c.size(); ++k) CHECK(c[k] == Approx(b[k]).margin(1e-13));
  }
  auto x = s.from_brownian(9, [](double b) { return std::exp(b); });
  CHECK(cond_expect(s, x, 9).values == x.values);
  auto sq = s.from_brownian(9, [](double b) { return b * b; });
  CHECK(cond_expect(s, sq, 0)[0] == Approx(1.0));
  CHECK_THROWS_AS(cond_expect(s, cond_expect(s, x, 3), 5), InvalidInput);
}

TEST_CASE("tower, linearity and monotonicity on the tree") {
  auto s = build_scenarios(TimeGrid(1.5, 30), Backend::tree);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    RandomVariable x{30, std::vector<double>(31)}, y{30, std::vector<double>(31)};
    for (auto& v : x.values) v = u(rng);
    for (std::size_t k = 0; k < 31; ++k) y[k] = x[k] + std::fabs(u(rng));
    const double a = u(rng), b = u(rng);
    for (std::size_t i = 0; i <= 30; i += 7) {
      auto cx = cond_expect(s, x, i);
      auto cy = cond_expect(s, y, i);
      CHECK(expect(s, cx) == Approx(expect(s, x)).margin(1e-13));
      auto lin = cond_expect(s, a * x + b * y, i);
      for (std::size_t k = 0; k < lin.size(); ++k) {
        CHECK(lin[k] == Approx(a * cx[k] + b * cy[k]).margin(1e-12));
        CHECK(cx[k] <= cy[k]);
      }
    }
  }
}

TEST_CASE("monte carlo ensemble") {
  auto a = build_scenarios(TimeGrid(1.0, 20), Backend::montecarlo, 4000, 99, 3);
  auto b = build_scenarios(TimeGrid(1.0, 20), Backend::montecarlo, 4000, 99, 3);
  auto c = build_scenarios(TimeGrid(1.0, 20), Backend::montecarlo, 4000, 100, 3);
  for (std::size_t i = 0; i <= 20; ++i) {
    auto ba = a.brownian(i), bb = b.brownian(i);
    REQUIRE(std::equal(ba.begin(), ba.end(), bb.begin()));
  }
  CHECK(a.brownian(20)[0] != c.brownian(20)[0]);
  for (double v : a.brownian(0)) CHECK(v == 0.0);

  SECTION("tower within three standard errors") {
    auto x = a.from_brownian(20, [](double v) { return v * v + std::sin(v); });
    for (std::size_t i : {0, 5, 19}) {
      const double se = standard_error(a, x);
      CHECK(std::fabs(expect(a, cond_expect(a, x, i)) - expect(a, x)) <= 3.0 * se + 1e-12);
    }
  }
  SECTION("regression reproduces polynomials of the current state") {
    auto big = build_scenarios(TimeGrid(1.0, 20), Backend::montecarlo, 40000, 5, 3);
    auto x = big.from_brownian(20, [](double v) { return v * v; });
    auto c10 = cond_expect(big, x, 10);
    auto b10 = big.brownian(10);
    double ss = 0.0;
    for (std::size_t p = 0; p < c10.size(); ++p) ss += std::pow(c10[p] - (b10[p] * b10[p] + 0.5), 2);
    CHECK(std::sqrt(ss / static_cast<double>(c10.size())) < 0.05);
  }
  CHECK_THROWS_AS(build_scenarios(TimeGrid(1.0, 2), Backend::montecarlo, 1, 0, 3), InvalidInput);
  CHECK_THROWS_AS(build_scenarios(TimeGrid(1.0, 2), Backend::montecarlo, 10, 0, 0), InvalidInput);
}

TEST_CASE("girsanov weights") {
  auto s = build_scenarios(TimeGrid(1.0, 200), Backend::tree);
  auto w0 = girsanov_weights(s, 0.0);
  for (double v : w0.values) CHECK(v == Approx(1.0));
  for (double th : {-0.5, 0.25, 1.0}) {
    auto w = girsanov_weights(s, th);
    CHECK(expect(s, w) == Approx(1.0).epsilon(1e-14));
    // B_T drifts by theta T under the tilted measure
    CHECK(tilted_expect(s, w, s.brownian_rv(200)) == Approx(th).margin(2e-2));
    // tilted expectation of a constant is exact
    CHECK(tilted_expect(s, w, s.constant(50, 2.0)) == Approx(2.0).epsilon(1e-13));
  }
  CHECK_THROWS_AS(girsanov_weights(s, std::nan("")), InvalidInput);
}

TEST_CASE("random variable arithmetic checks indices") {
  auto s = build_scenarios(TimeGrid(1.0, 4), Backend::tree);
  auto x = s.constant(2, 1.0);
  auto y = s.constant(3, 1.0);
  CHECK_THROWS_AS(x + y, InvalidInput);
  CHECK_THROWS_AS(s.check(RandomVariable{2, {1.0}}), InvalidInput);
  CHECK_THROWS_AS(s.brownian(5), InvalidInput);
}
