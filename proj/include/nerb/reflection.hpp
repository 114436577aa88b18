#pragma once

// Reflection through a nonlinear-expectation constraint E[l(t, Y_t)] >= 0.
//
// The reflector K is deterministic. For a driver process C that does not
// depend on (Y, Z), the solution is Y = X + K_T - K, where
//   X_t = E_t[xi + int_t^T C_s ds],
//   L_t(X) = inf{x >= 0 : E[l(t, x + X)] >= 0},
//   K_T - K_t = sup_{s in [t, T]} L_s(X_s).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nerb/bsde.hpp"
#include "nerb/errors.hpp"
#include "nerb/expectation.hpp"
#include "nerb/scenario.hpp"

namespace nerb {

inline constexpr double kRootTolerance = 1e-8;
inline constexpr std::size_t kMaxBisection = 200;
inline constexpr double kFeasibilityTolerance = 1e-6;

enum class LossShape { linear, concave, convex, general };

/// l(t, b, x), strictly increasing in x with
/// c_lower |x - y| <= |l(t, x) - l(t, y)| <= c_upper |x - y|.
/// `b` is the Brownian value of the node, used only when `random` is set.
struct LossFunction {
  std::function<double(double t, double b, double x)> eval;
  double c_lower = 1.0;
  double c_upper = 1.0;
  LossShape shape = LossShape::general;
  bool random = false;

  double operator()(double t, double b, double x) const { return eval(t, b, x); }

  /// slope (x - u)
  static LossFunction linear(double u, double slope = 1.0) {
    return {[u, slope](double, double, double x) { return slope * (x - u); }, slope, slope,
            LossShape::linear, false};
  }

  /// Checks the constants and strict monotonicity on a sample lattice.
  void validate(const TimeGrid& grid) const {
    if (!eval) throw InvalidInput("LossFunction: missing evaluator");
    if (!(c_lower > 0.0) || !(c_upper >= c_lower) || !std::isfinite(c_upper))
      throw InvalidInput("LossFunction: need 0 < c_l <= C_l");
    const double step = 0.125;
    const std::vector<double> bs = random ? std::vector<double>{-2.0, -0.5, 0.0, 0.5, 2.0}
                                          : std::vector<double>{0.0};
    for (std::size_t q = 0; q <= 4; ++q) {
      const double t = grid.time(q * grid.steps() / 4);
      for (double b : bs) {
        double prev = eval(t, b, -20.0);
        for (double x = -20.0 + step; x <= 20.0; x += step) {
          const double cur = eval(t, b, x);
          const double slope = (cur - prev) / step;
          if (!(slope >= c_lower * (1.0 - 1e-9)) || !(slope <= c_upper * (1.0 + 1e-9)))
            throw InvalidInput("LossFunction: slope " + std::to_string(slope) + " near x=" +
                               std::to_string(x) + ", t=" + std::to_string(t) +
                               " outside [c_l, C_l]");
          prev = cur;
        }
      }
    }
  }
};

/// l(t_i, shift + X) nodewise.
inline RandomVariable apply_loss(const ScenarioSet& s, const LossFunction& l,
                                 const RandomVariable& x, double shift = 0.0) {
  s.check(x);
  const double t = s.grid().time(x.index);
  auto b = s.brownian(x.index);
  RandomVariable out{x.index, std::vector<double>(x.size())};
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = l(t, b[k], shift + x[k]);
  return out;
}

/// Per-index values L_i >= 0.
struct ConstraintProfile {
  std::vector<double> values;
};

/// Deterministic nondecreasing flow with K_0 = 0.
struct ReflectorFlow {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double increment(std::size_t i) const { return values[i + 1] - values[i]; }
};

struct SolveDiagnostics {
  std::size_t n_sub = 1;
  std::vector<std::size_t> boundaries;
  std::vector<std::size_t> iterations;                 // per subinterval, right to left
  std::vector<std::vector<double>> difference_norms;   // per subinterval, right to left
  double contraction_factor = 0.0;                     // max d_{n+1} / d_n above the noise floor
  std::size_t retries = 0;                             // interval halvings
};

struct ReflectedSolution {
  std::vector<RandomVariable> y;      // indices 0..m
  std::vector<RandomVariable> z;      // indices 0..m-1
  ReflectorFlow k;
  ConstraintProfile profile;          // L_i on the final pass
  std::vector<double> constraint;     // constraint value at Y_i
  double skorokhod = 0.0;
  SolveDiagnostics diagnostics;
};

/// X_i = E_i[xi + sum_{k >= i} C_k dt], left-endpoint rule.
struct UnreflectedProcess {
  std::vector<RandomVariable> x;
};

/// Interface every reflection constraint provides to the solvers.
template <class C>
concept ReflectionConstraint = requires(const C& c, const RandomVariable& x) {
  { c.shift(x) } -> std::convertible_to<double>;   // minimal push L_i(x) >= 0
  { c.value(x) } -> std::convertible_to<double>;   // >= 0 when satisfied
  { c.kappa() } -> std::convertible_to<double>;
  { c.lipschitz_ratio() } -> std::convertible_to<double>;
};

/// L_i(X) = inf{x >= 0 : E[l(t_i, x + X)] >= 0} by bisection.
inline double operator_L(const NonlinearExpectation& e, const LossFunction& l,
                         const ScenarioSet& s, const RandomVariable& x) {
  s.check(x);
  if (!all_finite(x)) throw InvalidInput("operator_L: X has non-finite values");
  auto h = [&](double shift) { return eval_expectation(e, s, apply_loss(s, l, x, shift)); };
  double h_lo = h(0.0);
  if (h_lo >= 0.0) return 0.0;
  const double horizon = s.grid().horizon();
  double hi = (-h_lo) * std::exp(e.kappa * horizon) / (e.scale * l.c_lower);
  hi = hi * (1.0 + 1e-6) + 1e-12;
  double h_hi = h(hi);
  if (h_hi < 0.0)
    throw NumericalFailure("operator_L: bracket failure at t=" +
                           std::to_string(s.grid().time(x.index)) +
                           "; loss or expectation violates its stated constants");
  double lo = 0.0;
  for (std::size_t it = 0; it < kMaxBisection && hi - lo > kRootTolerance; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double h_mid = h(mid);
    if (h_mid >= 0.0) {
      hi = mid;
      h_hi = h_mid;
    } else {
      lo = mid;
      h_lo = h_mid;
    }
  }
  // Secant point inside the final bracket.
  double root = hi;
  if (h_hi > h_lo) root = std::clamp(lo - h_lo * (hi - lo) / (h_hi - h_lo), lo, hi);
  return std::max(root, 0.0);
}

inline double operator_L(const NonlinearExpectation& e, const LossFunction& l,
                         const ScenarioSet& s, std::size_t i, const RandomVariable& x) {
  if (x.index != i) throw InvalidInput("operator_L: X does not live at the requested index");
  return operator_L(e, l, s, x);
}

/// K_i = max_j L_j - max_{j >= i} L_j.
inline ReflectorFlow build_K(const ConstraintProfile& profile) {
  const auto& l = profile.values;
  ReflectorFlow k;
  if (l.empty()) return k;
  for (double v : l)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("build_K: profile must be finite and >= 0");
  std::vector<double> suffix(l.size());
  double running = 0.0;
  for (std::size_t i = l.size(); i-- > 0;) {
    running = std::max(running, l[i]);
    suffix[i] = running;
  }
  k.values.resize(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) k.values[i] = suffix[0] - suffix[i];
  return k;
}

/// E[l(t, Y_t)] >= 0 for a nonlinear expectation E.
class MeanConstraint {
 public:
  MeanConstraint(NonlinearExpectation e, LossFunction l, const ScenarioSet& s)
      : e_(std::move(e)), l_(std::move(l)), s_(&s) {
    e_.validate(s.grid());
    l_.validate(s.grid());
  }

  double shift(const RandomVariable& x) const { return operator_L(e_, l_, *s_, x); }
  double value(const RandomVariable& y) const { return eval_expectation(e_, *s_, apply_loss(*s_, l_, y)); }
  double kappa() const { return e_.kappa; }
  double lipschitz_ratio() const { return e_.scale * l_.c_upper / l_.c_lower; }

  const NonlinearExpectation& expectation() const { return e_; }
  const LossFunction& loss() const { return l_; }

 private:
  NonlinearExpectation e_;
  LossFunction l_;
  const ScenarioSet* s_;
};

namespace detail {

/// Result of one reflected pass on a window [first, last] with a frozen
/// driver. Vectors are indexed by absolute grid index.
struct WindowPass {
  std::vector<RandomVariable> x;    // unreflected
  std::vector<RandomVariable> y;
  std::vector<RandomVariable> z;
  std::vector<double> shift;        // L_i
  std::vector<double> dk;           // K_{i+1} - K_i for i in [first, last)
};

template <ReflectionConstraint Constraint>
WindowPass reflect_window(const ScenarioSet& s, std::size_t first, const RandomVariable& terminal,
                          std::span<const RandomVariable> drift, const Constraint& c) {
  const std::size_t last = terminal.index;
  const std::size_t m = s.steps();
  const double dt = s.grid().dt();
  WindowPass w;
  w.x.resize(m + 1);
  w.y.resize(m + 1);
  w.z.resize(m);
  w.shift.assign(m + 1, 0.0);
  w.dk.assign(m, 0.0);

  w.x[last] = terminal;
  for (std::size_t i = last; i-- > first;) {
    RandomVariable xi = s.step_back(w.x[i + 1]);
    const RandomVariable& ci = drift[i];
    for (std::size_t k = 0; k < xi.size(); ++k) xi[k] += ci[k] * dt;
    w.z[i] = s.martingale_density(w.x[i + 1]);
    w.x[i] = std::move(xi);
  }

  for (std::size_t i = first; i <= last; ++i) w.shift[i] = c.shift(w.x[i]);

  double suffix = 0.0;
  std::vector<double> suffix_max(m + 1, 0.0);
  for (std::size_t i = last + 1; i-- > first;) {
    suffix = std::max(suffix, w.shift[i]);
    suffix_max[i] = suffix;
    w.y[i] = w.x[i] + suffix;
  }
  for (std::size_t i = first; i < last; ++i) w.dk[i] = suffix_max[i] - suffix_max[i + 1];
  return w;
}

template <ReflectionConstraint Constraint>
void check_feasible(const Constraint& c, const RandomVariable& terminal) {
  const double v = c.value(terminal);
  if (v < -kFeasibilityTolerance)
    throw Infeasible("terminal condition violates the constraint (value " + std::to_string(v) + ")");
}

inline ReflectorFlow cumulate(std::span<const double> dk) {
  ReflectorFlow k;
  k.values.assign(dk.size() + 1, 0.0);
  for (std::size_t i = 0; i < dk.size(); ++i) k.values[i + 1] = k.values[i] + dk[i];
  return k;
}

}  // namespace detail

/// Sum_i value(Y_i) (K_{i+1} - K_i): zero when K moves only where the
/// constraint binds.
template <ReflectionConstraint Constraint>
double skorokhod_residual(const ScenarioSet& s, const ReflectedSolution& sol, const Constraint& c) {
  const std::size_t m = s.steps();
  if (sol.y.size() != m + 1 || sol.k.size() != m + 1)
    throw InvalidInput("skorokhod_residual: solution was not produced on this grid");
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double dk = sol.k.increment(i);
    if (dk != 0.0) acc += c.value(sol.y[i]) * dk;
  }
  return acc;
}

inline double skorokhod_residual(const ScenarioSet& s, const ReflectedSolution& sol,
                                 const LossFunction& l, const NonlinearExpectation& e) {
  return skorokhod_residual(s, sol, MeanConstraint(e, l, s));
}

/// X_i = E_i[xi + sum_{k >= i} C_k dt].
inline UnreflectedProcess unreflected_process(const ScenarioSet& s, const TerminalClaim& xi,
                                              std::span<const RandomVariable> drift) {
  const std::size_t m = s.steps();
  UnreflectedProcess out;
  out.x.resize(m + 1);
  out.x[m] = xi;
  for (std::size_t i = m; i-- > 0;) {
    RandomVariable v = s.step_back(out.x[i + 1]);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += drift[i][k] * s.grid().dt();
    out.x[i] = std::move(v);
  }
  return out;
}

/// Driver values C_k = f(t_k, B_k, 0, 0) for a driver without (y, z) dependence.
inline std::vector<RandomVariable> driver_values(const ScenarioSet& s, const Driver& f) {
  if (f.depends_on_y || f.depends_on_z)
    throw InvalidInput("driver_values: driver depends on (y, z)");
  std::vector<RandomVariable> c;
  c.reserve(s.steps());
  for (std::size_t i = 0; i < s.steps(); ++i) {
    const double t = s.grid().time(i);
    c.push_back(s.from_brownian(i, [&](double b) { return f(t, b, 0.0, 0.0); }));
  }
  return c;
}

/// Reflected solve for a driver process with no (y, z) dependence.
template <ReflectionConstraint Constraint>
ReflectedSolution solve_constant_driver(const ScenarioSet& s, const TerminalClaim& xi,
                                        std::span<const RandomVariable> drift, const Constraint& c) {
  const std::size_t m = s.steps();
  s.check(xi);
  if (xi.index != m) throw InvalidInput("solve_constant_driver: terminal claim must live at T");
  if (drift.size() != m) throw InvalidInput("solve_constant_driver: need one driver value per step");
  for (std::size_t i = 0; i < m; ++i) s.check(drift[i]);
  detail::check_feasible(c, xi);

  detail::WindowPass w = detail::reflect_window(s, 0, xi, drift, c);
  ReflectedSolution sol;
  sol.y = std::move(w.y);
  sol.z = std::move(w.z);
  sol.k = detail::cumulate(w.dk);
  sol.profile.values = std::move(w.shift);
  sol.constraint.resize(m + 1);
  for (std::size_t i = 0; i <= m; ++i) sol.constraint[i] = c.value(sol.y[i]);
  sol.skorokhod = skorokhod_residual(s, sol, c);
  sol.diagnostics.boundaries = {0, m};
  sol.diagnostics.iterations = {1};
  return sol;
}

inline ReflectedSolution solve_constant_driver(const ScenarioSet& s, const TerminalClaim& xi,
                                               const Driver& f, const LossFunction& l,
                                               const NonlinearExpectation& e) {
  const auto drift = driver_values(s, f);
  return solve_constant_driver(s, xi, std::span<const RandomVariable>(drift), MeanConstraint(e, l, s));
}

}  // namespace nerb
