#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "nerb/expectation.hpp"

using namespace nerb;
using Catch::Approx;

namespace {

RandomVariable random_claim(const ScenarioSet& s, std::size_t i, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const double a = u(rng), b = u(rng), c = u(rng);
  return s.from_brownian(i, [&](double x) { return a + b * x + c * std::sin(2.0 * x); });
}

std::vector<NonlinearExpectation> all_kinds(double kappa) {
  return {NonlinearExpectation::classical(), NonlinearExpectation::g_expectation(drivers::abs_yz(kappa)),
          NonlinearExpectation::g_expectation(drivers::abs_yz(-kappa)),
          NonlinearExpectation::g_expectation(drivers::abs_z(kappa)), NonlinearExpectation::alpha_maxmin(0.3, kappa)};
}

}  // namespace

TEST_CASE("closed-form values") {
  auto s = build_scenarios(TimeGrid(1.0, 200), Backend::tree);
  CHECK(eval_expectation(NonlinearExpectation::classical(), s, s.brownian_rv(200)) == Approx(0.0).margin(1e-12));
  const double g = eval_expectation(NonlinearExpectation::g_expectation(drivers::abs_yz(-0.5)), s, s.constant(200, 2.0));
  CHECK(std::fabs(g - 2.0 * std::exp(-0.5)) <= 1e-3);
  // upper driver grows the constant
  CHECK(g_kappa(s, s.constant(200, 2.0), 0.5) == Approx(2.0 * std::exp(0.5)).margin(1e-2));
  CHECK(eval_expectation(NonlinearExpectation::g_expectation(drivers::abs_z(0.5)), s, s.constant(200, 3.0)) ==
        Approx(3.0).margin(1e-10));
}

TEST_CASE("claims at intermediate indices are continued as constants") {
  auto s = build_scenarios(TimeGrid(1.0, 100), Backend::tree);
  const auto g = drivers::abs_yz(-0.4);
  std::mt19937_64 rng(8);
  for (std::size_t i : {0, 1, 37, 99}) {
    auto x = random_claim(s, i, rng);
    const double dt = s.grid().dt();
    const double lhs = g_expectation(s, x, g);
    // oracle: y = v - 0.4 |y| dt solved in closed form on (t_i, T], where z = 0
    RandomVariable phi2 = x;
    for (std::size_t k = 100; k-- > i;)
      for (auto& v : phi2.values) v = v >= 0 ? v / (1.0 + 0.4 * dt) : v / (1.0 - 0.4 * dt);
    const double rhs = expect(s, solve_bsde(s, phi2, g).y[0]);
    CHECK(lhs == Approx(rhs).margin(1e-12));
  }
}

TEST_CASE("monotonicity for every kind") {
  auto s = build_scenarios(TimeGrid(1.0, 60), Backend::tree);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& e : all_kinds(0.6)) {
    for (int trial = 0; trial < 10; ++trial) {
      auto x = random_claim(s, 60, rng);
      auto y = x;
      for (auto& v : y.values) v += u(rng);
      CHECK(eval_expectation(e, s, x) <= eval_expectation(e, s, y) + 1e-13);
    }
  }
}

TEST_CASE("duality of the upper and lower g-expectations") {
  auto s = build_scenarios(TimeGrid(1.0, 80), Backend::tree);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_claim(s, 80, rng);
    CHECK(g_kappa(s, x, 0.7) == Approx(-g_kappa(s, -x, -0.7)).margin(1e-12));
  }
}

TEST_CASE("positive homogeneity") {
  auto s = build_scenarios(TimeGrid(1.0, 80), Backend::tree);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_claim(s, 80, rng);
    const double base = g_kappa(s, x, 0.7);
    for (double c : {0.5, 2.0, 10.0}) CHECK(g_kappa(s, c * x, 0.7) == Approx(c * base).margin(1e-11));
  }
}

TEST_CASE("sandwich between the dominating g-expectations") {
  auto s = build_scenarios(TimeGrid(1.0, 60), Backend::tree);
  std::mt19937_64 rng(9);
  const double kappa = 0.5;
  Driver g{[](double t, double, double y, double z) { return 0.3 * std::sin(y) + 0.5 * std::tanh(z) * (1.0 - t / 2.0); },
           kappa, true, true, false};
  for (int trial = 0; trial < 15; ++trial) {
    auto x = random_claim(s, 60, rng);
    auto y = random_claim(s, 60, rng);
    const double diff = g_expectation(s, x, g) - g_expectation(s, y, g);
    CHECK(g_kappa(s, x - y, -kappa) <= diff + 1e-12);
    CHECK(diff <= g_kappa(s, x - y, kappa) + 1e-12);
  }
}

TEST_CASE("alpha-maxmin agrees with the constant-kernel Girsanov grid") {
  auto s = build_scenarios(TimeGrid(1.0, 120), Backend::tree);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (double alpha : {0.0, 0.5, 1.0}) {
    const auto e = NonlinearExpectation::alpha_maxmin(alpha, 0.5);
    for (int trial = 0; trial < 5; ++trial) {
      // monotone in B_T, where a constant extreme kernel is optimal
      const double a = u(rng), b = std::fabs(u(rng)), c = std::fabs(u(rng));
      const double sign = trial % 2 ? 1.0 : -1.0;
      auto x = s.from_brownian(120, [&](double v) { return a + sign * (b * v + c * std::tanh(v)); });
      CHECK(eval_expectation(e, s, x) == Approx(alpha_maxmin_girsanov(e, s, x)).margin(5e-2));
    }
  }
  const auto e = NonlinearExpectation::alpha_maxmin(1.0, 0.5);
  CHECK(eval_expectation(e, s, s.brownian_rv(120)) == Approx(0.5).margin(1e-2));
}

TEST_CASE("adapted kernels dominate the constant grid on non-monotone claims") {
  auto s = build_scenarios(TimeGrid(1.0, 120), Backend::tree);
  std::mt19937_64 rng(14);
  const auto upper = NonlinearExpectation::alpha_maxmin(1.0, 0.5);
  const auto lower = NonlinearExpectation::alpha_maxmin(0.0, 0.5);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_claim(s, 120, rng);
    CHECK(eval_expectation(upper, s, x) >= alpha_maxmin_girsanov(upper, s, x) - 2e-2);
    CHECK(eval_expectation(lower, s, x) <= alpha_maxmin_girsanov(lower, s, x) + 2e-2);
  }
}

TEST_CASE("domination report") {
  auto s = build_scenarios(TimeGrid(1.0, 50), Backend::tree);
  auto x = s.brownian_rv(50);
  auto r = domination_gap(NonlinearExpectation::classical(), s, x, x);
  CHECK(r.lower_slack == Approx(0.0).margin(1e-14));
  CHECK(r.upper_slack == Approx(0.0).margin(1e-14));
  std::mt19937_64 rng(4);
  for (double alpha : {0.0, 0.5, 1.0}) {
    auto e = NonlinearExpectation::alpha_maxmin(alpha, 0.4);
    for (int trial = 0; trial < 10; ++trial) {
      auto rep = domination_gap(e, s, random_claim(s, 50, rng), random_claim(s, 50, rng));
      CHECK(rep.lower_slack >= -1e-6);
      CHECK(rep.upper_slack >= -1e-6);
    }
  }
}

TEST_CASE("validation") {
  TimeGrid grid(1.0, 10);
  Driver shifted{[](double, double, double y, double) { return 0.1 + 0.2 * y; }, 0.2, true, false, false};
  CHECK_THROWS_AS(NonlinearExpectation::g_expectation(shifted).validate(grid), InvalidInput);
  Driver random{[](double, double b, double, double z) { return b * z; }, 1.0, false, true, true};
  CHECK_THROWS_AS(NonlinearExpectation::g_expectation(random).validate(grid), InvalidInput);
  CHECK_THROWS_AS(NonlinearExpectation::g_expectation(drivers::abs_yz(0.5), 0.2).validate(grid), InvalidInput);
  CHECK_THROWS_AS(NonlinearExpectation::alpha_maxmin(1.5, 0.2).validate(grid), InvalidInput);
  CHECK_THROWS_AS(NonlinearExpectation::alpha_maxmin(0.5, -0.2).validate(grid), InvalidInput);
  auto e = NonlinearExpectation::classical();
  e.scale = 0.0;
  CHECK_THROWS_AS(e.validate(grid), InvalidInput);
  CHECK_NOTHROW(NonlinearExpectation::g_expectation(drivers::abs_yz(0.5)).validate(grid));
}
