#pragma once

// Nonlinear expectations E: L^2(F_T) -> R dominated by the g-expectations with
// drivers +-kappa (|y| + |z|).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "nerb/bsde.hpp"
#include "nerb/errors.hpp"
#include "nerb/scenario.hpp"

namespace nerb {

enum class ExpectationKind { classical, gexp, alpha_maxmin };

struct NonlinearExpectation {
  ExpectationKind kind = ExpectationKind::classical;
  Driver g;                       // gexp only
  double alpha = 1.0;             // alpha_maxmin only
  double kappa = 0.0;             // domination constant
  double scale = 1.0;             // domination scale M
  std::size_t kernel_grid = 21;   // Girsanov second opinion for alpha_maxmin

  static NonlinearExpectation classical() { return {}; }

  /// g-expectation; kappa defaults to the driver's Lipschitz constant.
  static NonlinearExpectation g_expectation(Driver g, double kappa = -1.0) {
    NonlinearExpectation e;
    e.kind = ExpectationKind::gexp;
    e.kappa = kappa < 0.0 ? g.lipschitz : kappa;
    e.g = std::move(g);
    return e;
  }

  /// alpha sup_theta E^theta + (1 - alpha) inf_theta E^theta over |theta| <= kappa.
  static NonlinearExpectation alpha_maxmin(double alpha, double kappa, std::size_t grid = 21) {
    NonlinearExpectation e;
    e.kind = ExpectationKind::alpha_maxmin;
    e.alpha = alpha;
    e.kappa = kappa;
    e.kernel_grid = grid;
    return e;
  }

  void validate(const TimeGrid& grid) const {
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw InvalidInput("expectation: kappa must be >= 0");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidInput("expectation: scale M must be > 0");
    if (kind == ExpectationKind::alpha_maxmin) {
      if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("expectation: alpha must lie in [0, 1]");
      if (kernel_grid < 2) throw InvalidInput("expectation: kernel grid needs at least 2 points");
    }
    if (kind == ExpectationKind::gexp) {
      g.validate();
      if (g.depends_on_b)
        throw InvalidInput("expectation: g-expectation drivers may not depend on the Brownian value");
      if (g.lipschitz > kappa)
        throw InvalidInput("expectation: kappa is below the driver's Lipschitz constant");
      for (std::size_t i = 0; i <= grid.steps(); ++i) {
        const double v = g(grid.time(i), 0.0, 0.0, 0.0);
        if (v != 0.0)
          throw InvalidInput("expectation: driver does not vanish at (y, z) = (0, 0) at t=" +
                             std::to_string(grid.time(i)));
      }
    }
  }
};

/// g-expectation G_{0,T}[X] for X at any index i. An F_{t_i}-measurable X is
/// continued as a constant to T; on (t_i, T] the solution then has z = 0 and
/// follows a nodewise scalar recursion, after which the tree/regression solve
/// runs on [0, t_i].
inline double g_expectation(const ScenarioSet& s, const RandomVariable& x, const Driver& g) {
  s.check(x);
  const std::size_t m = s.steps();
  const double dt = s.grid().dt();
  if (g.depends_on_y && g.lipschitz * dt >= 1.0)
    throw InvalidInput("g_expectation: lambda * dt >= 1, inner iteration is not contractive");
  RandomVariable terminal = x;
  if (x.index < m) {
    for (auto& v : terminal.values)
      for (std::size_t k = m; k-- > x.index;) v = detail::implicit_step(g, s.grid().time(k), 0.0, v, 0.0, dt);
  }
  const BsdePair sol = solve_bsde(s, terminal, g, 0);
  return expect(s, sol.y[0]);
}

/// G^{kappa}[X] (kappa > 0) or G^{-|kappa|}[X] (kappa < 0), drivers kappa (|y| + |z|).
inline double g_kappa(const ScenarioSet& s, const RandomVariable& x, double kappa) {
  if (kappa == 0.0) return expect(s, x);
  return g_expectation(s, x, drivers::abs_yz(kappa));
}

inline double eval_expectation(const NonlinearExpectation& e, const ScenarioSet& s,
                               const RandomVariable& x) {
  s.check(x);
  if (!all_finite(x)) throw InvalidInput("eval_expectation: claim has non-finite values");
  double out = 0.0;
  switch (e.kind) {
    case ExpectationKind::classical:
      out = expect(s, x);
      break;
    case ExpectationKind::gexp:
      out = g_expectation(s, x, e.g);
      break;
    case ExpectationKind::alpha_maxmin: {
      const double upper = g_expectation(s, x, drivers::abs_z(e.kappa));
      const double lower = g_expectation(s, x, drivers::abs_z(-e.kappa));
      out = e.alpha * upper + (1.0 - e.alpha) * lower;
      break;
    }
  }
  if (!std::isfinite(out)) throw NumericalFailure("eval_expectation: non-finite result");
  return out;
}

/// The alpha-maxmin value over a finite grid of constant Girsanov kernels.
/// Underestimates the spread of the full adapted-kernel value.
inline double alpha_maxmin_girsanov(const NonlinearExpectation& e, const ScenarioSet& s,
                                    const RandomVariable& x) {
  double hi = -std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity();
  const std::size_t n = std::max<std::size_t>(e.kernel_grid, 2);
  for (std::size_t k = 0; k < n; ++k) {
    const double theta = -e.kappa + 2.0 * e.kappa * static_cast<double>(k) / static_cast<double>(n - 1);
    const double v = tilted_expect(s, girsanov_weights(s, theta), x);
    hi = std::max(hi, v);
    lo = std::min(lo, v);
  }
  return e.alpha * hi + (1.0 - e.alpha) * lo;
}

/// Slacks of M G^{-kappa}[X1 - X2] <= E[X1] - E[X2] <= M G^{kappa}[X1 - X2].
struct DominationReport {
  double lower_slack = 0.0;
  double upper_slack = 0.0;
};

inline DominationReport domination_gap(const NonlinearExpectation& e, const ScenarioSet& s,
                                       const RandomVariable& x1, const RandomVariable& x2) {
  if (x1.index != x2.index) throw InvalidInput("domination_gap: claims live at different indices");
  const double diff = eval_expectation(e, s, x1) - eval_expectation(e, s, x2);
  const RandomVariable d = x1 - x2;
  DominationReport r;
  r.lower_slack = diff - e.scale * g_kappa(s, d, -e.kappa);
  r.upper_slack = e.scale * g_kappa(s, d, e.kappa) - diff;
  return r;
}

}  // namespace nerb
