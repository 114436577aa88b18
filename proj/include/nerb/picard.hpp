#pragma once

// General driver f(t, y, z): Picard iteration of the frozen-driver reflected
// solve on short subintervals, stitched right to left.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nerb/bsde.hpp"
#include "nerb/errors.hpp"
#include "nerb/expectation.hpp"
#include "nerb/reflection.hpp"
#include "nerb/scenario.hpp"

namespace nerb {

enum class DivergenceAction { halve_intervals, fail };

struct SolveOptions {
  std::size_t n_sub = 1;  // 0 selects the count from the contraction heuristic
  double picard_tol = 1e-8;
  std::size_t max_picard_iters = 100;
  DivergenceAction on_divergence = DivergenceAction::halve_intervals;

  void validate() const {
    if (!(picard_tol > 0.0)) throw InvalidInput("SolveOptions: picard_tol must be > 0");
    if (max_picard_iters == 0) throw InvalidInput("SolveOptions: max_picard_iters must be >= 1");
  }
};

/// Heuristic contraction constant 8 (1 + r^2 e^{2 kappa T}) lambda^2 e^{lambda T},
/// r = C_l / c_l. The map is constant when lambda = 0.
inline double contraction_constant(double lambda, double kappa, double c_lower, double c_upper,
                                   double horizon) {
  const double ratio = c_upper / c_lower;
  return 8.0 * (1.0 + ratio * ratio * std::exp(2.0 * kappa * horizon)) * lambda * lambda *
         std::exp(lambda * horizon);
}

/// Subinterval boundaries 0 = b_0 < ... < b_n = m snapped to grid nodes.
/// n_sub = 0 picks the smallest n with c h max(1, h) < 1/2, h = T / n.
inline std::vector<std::size_t> subinterval_plan(double lambda, double kappa, double c_lower,
                                                 double c_upper, const TimeGrid& grid,
                                                 std::size_t n_sub) {
  const std::size_t m = grid.steps();
  if (n_sub == 0) {
    const double c = contraction_constant(lambda, kappa, c_lower, c_upper, grid.horizon());
    n_sub = 1;
    while (n_sub < m) {
      const double h = grid.horizon() / static_cast<double>(n_sub);
      if (c * h * std::max(1.0, h) < 0.5) break;
      ++n_sub;
    }
  }
  if (n_sub > m)
    throw InvalidInput("subinterval_plan: " + std::to_string(n_sub) + " subintervals on " +
                       std::to_string(m) + " steps cannot snap to the grid");
  std::vector<std::size_t> b(n_sub + 1);
  for (std::size_t k = 0; k <= n_sub; ++k) b[k] = k * m / n_sub;
  return b;
}

namespace detail {

inline constexpr double kNoiseFloor = 1e-12;
inline constexpr std::size_t kDivergenceStreak = 5;

struct PicardState {
  std::vector<RandomVariable> y;
  std::vector<RandomVariable> z;
};

inline double difference_norm(const ScenarioSet& s, std::size_t first, std::size_t last,
                              const std::vector<RandomVariable>& y1, const std::vector<RandomVariable>& z1,
                              const std::vector<RandomVariable>& y0, const std::vector<RandomVariable>& z0) {
  double sup = 0.0;
  for (std::size_t i = first; i <= last; ++i)
    for (std::size_t k = 0; k < y1[i].size(); ++k) sup = std::max(sup, std::fabs(y1[i][k] - y0[i][k]));
  double l2 = 0.0;
  for (std::size_t i = first; i < last; ++i) {
    RandomVariable d = z1[i] - z0[i];
    l2 += expect(s, d * d) * s.grid().dt();
  }
  return sup + std::sqrt(l2);
}

// Runs all subintervals for one plan; throws Divergence on failure.
template <ReflectionConstraint Constraint>
ReflectedSolution solve_plan(const ScenarioSet& s, const TerminalClaim& xi, const Driver& f,
                             const Constraint& c, const SolveOptions& opts,
                             const std::vector<std::size_t>& plan) {
  const std::size_t m = s.steps();
  ReflectedSolution sol;
  sol.y.resize(m + 1);
  sol.z.resize(m);
  sol.profile.values.assign(m + 1, 0.0);
  std::vector<double> dk(m, 0.0);
  sol.y[m] = xi;
  sol.diagnostics.n_sub = plan.size() - 1;
  sol.diagnostics.boundaries = plan;

  double worst_ratio = 0.0;
  for (std::size_t block = plan.size() - 1; block-- > 0;) {
    const std::size_t first = plan[block];
    const std::size_t last = plan[block + 1];

    BsdePair init = solve_bsde(s, sol.y[last], f, first);
    PicardState cur{std::move(init.y), std::move(init.z)};
    cur.y.resize(m + 1);
    cur.z.resize(m);

    std::vector<double> norms;
    std::vector<RandomVariable> drift(m);
    WindowPass pass;
    bool converged = false;
    std::size_t streak = 0;
    for (std::size_t it = 0; it < opts.max_picard_iters; ++it) {
      for (std::size_t i = first; i < last; ++i) {
        const double t = s.grid().time(i);
        auto b = s.brownian(i);
        RandomVariable ci{i, std::vector<double>(b.size())};
        for (std::size_t k = 0; k < b.size(); ++k) ci[k] = f(t, b[k], cur.y[i][k], cur.z[i][k]);
        drift[i] = std::move(ci);
      }
      pass = reflect_window(s, first, sol.y[last], std::span<const RandomVariable>(drift), c);
      const double d = difference_norm(s, first, last, pass.y, pass.z, cur.y, cur.z);
      if (!std::isfinite(d)) throw Divergence("Picard iterate became non-finite");
      if (!norms.empty()) {
        streak = d > norms.back() ? streak + 1 : 0;
        if (norms.back() > kNoiseFloor) worst_ratio = std::max(worst_ratio, d / norms.back());
      }
      norms.push_back(d);
      for (std::size_t i = first; i <= last; ++i) cur.y[i] = pass.y[i];
      for (std::size_t i = first; i < last; ++i) cur.z[i] = pass.z[i];
      if (d < opts.picard_tol) {
        converged = true;
        break;
      }
      if (streak >= kDivergenceStreak)
        throw Divergence("Picard differences grew for " + std::to_string(kDivergenceStreak) +
                         " consecutive iterations on [" + std::to_string(s.grid().time(first)) + ", " +
                         std::to_string(s.grid().time(last)) + "]");
    }
    if (!converged)
      throw Divergence("Picard iteration did not reach tolerance within " +
                       std::to_string(opts.max_picard_iters) + " iterations");

    for (std::size_t i = first; i < last; ++i) {
      sol.y[i] = std::move(cur.y[i]);
      sol.z[i] = std::move(cur.z[i]);
      dk[i] = pass.dk[i];
      sol.profile.values[i] = pass.shift[i];
    }
    if (block + 1 == plan.size() - 1) sol.profile.values[last] = pass.shift[last];
    sol.diagnostics.iterations.push_back(norms.size());
    sol.diagnostics.difference_norms.push_back(std::move(norms));
  }
  sol.diagnostics.contraction_factor = worst_ratio;
  sol.k = cumulate(dk);
  sol.constraint.resize(m + 1);
  for (std::size_t i = 0; i <= m; ++i) sol.constraint[i] = c.value(sol.y[i]);
  sol.skorokhod = skorokhod_residual(s, sol, c);
  return sol;
}

}  // namespace detail

/// Reflected solve for a general Lipschitz driver under any constraint.
template <ReflectionConstraint Constraint>
ReflectedSolution solve_reflected(const ScenarioSet& s, const TerminalClaim& xi, const Driver& f,
                                  const Constraint& c, const SolveOptions& opts = {}) {
  opts.validate();
  f.validate();
  s.check(xi);
  const std::size_t m = s.steps();
  if (xi.index != m) throw InvalidInput("solve_reflected: terminal claim must live at T");
  if (!all_finite(xi)) throw InvalidInput("solve_reflected: terminal claim is not finite");
  detail::check_feasible(c, xi);

  std::size_t n_sub = opts.n_sub;
  std::size_t retries = 0;
  for (;;) {
    const auto plan = subinterval_plan(f.lipschitz, c.kappa(), 1.0, c.lipschitz_ratio(), s.grid(), n_sub);
    try {
      ReflectedSolution sol = detail::solve_plan(s, xi, f, c, opts, plan);
      sol.diagnostics.retries = retries;
      return sol;
    } catch (const Divergence&) {
      const std::size_t used = plan.size() - 1;
      if (opts.on_divergence == DivergenceAction::fail || used * 2 > m) throw;
      n_sub = used * 2;
      ++retries;
    }
  }
}

inline ReflectedSolution solve_reflected(const ScenarioSet& s, const TerminalClaim& xi,
                                         const Driver& f, const LossFunction& l,
                                         const NonlinearExpectation& e, const SolveOptions& opts = {}) {
  return solve_reflected(s, xi, f, MeanConstraint(e, l, s), opts);
}

}  // namespace nerb
