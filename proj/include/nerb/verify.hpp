#pragma once

// Executable checks of the structural properties of reflected solutions:
// the sup representation of E[Y_t], comparison orderings, minimality against
// deterministic competitors, and the tilted non-minimal solution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nerb/bsde.hpp"
#include "nerb/errors.hpp"
#include "nerb/expectation.hpp"
#include "nerb/picard.hpp"
#include "nerb/reflection.hpp"
#include "nerb/scenario.hpp"

namespace nerb {

/// Signed root of x -> E[l(t_i, Ybar - E[Ybar] + x)] with classical E[Ybar].
inline double lbar(const NonlinearExpectation& e, const LossFunction& l, const ScenarioSet& s,
                   const RandomVariable& ybar) {
  s.check(ybar);
  if (!all_finite(ybar)) throw InvalidInput("lbar: Ybar has non-finite values");
  const RandomVariable centred = ybar - expect(s, ybar);
  auto h = [&](double x) { return eval_expectation(e, s, apply_loss(s, l, centred, x)); };
  const double h0 = h(0.0);
  const double bound =
      std::fabs(h0) * std::exp(e.kappa * s.grid().horizon()) / (e.scale * l.c_lower) + 1.0;
  double lo = -bound, hi = bound;
  double h_lo = h(lo), h_hi = h(hi);
  if (h_lo > 0.0 || h_hi < 0.0)
    throw NumericalFailure("lbar: bracket failure at t=" + std::to_string(s.grid().time(ybar.index)));
  for (std::size_t it = 0; it < kMaxBisection && hi - lo > kRootTolerance; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double hm = h(mid);
    if (hm >= 0.0) {
      hi = mid;
      h_hi = hm;
    } else {
      lo = mid;
      h_lo = hm;
    }
  }
  if (h_hi > h_lo) return std::clamp(lo - h_lo * (hi - lo) / (h_hi - h_lo), lo, hi);
  return hi;
}

struct RepresentationData {
  std::vector<RandomVariable> ybar;  // E_i[xi + sum_{k >= i} f_k dt]
  std::vector<double> lbar;          // indices 0..m-1
  std::vector<double> mean_y;        // E[Y_i]
  std::vector<double> gap;           // E[Y_i] - sup over grid s >= i
  double max_abs_gap = 0.0;
};

/// Compares E[Y_t] with
///   sup_{s in [t, T]} { E[int_t^s f du + xi 1_{s=T}] + lbar_s 1_{s<T} }
/// with the sup taken over grid times.
inline RepresentationData representation_gap(const ScenarioSet& s, const ReflectedSolution& sol,
                                             const Driver& f, const NonlinearExpectation& e,
                                             const LossFunction& l) {
  const std::size_t m = s.steps();
  if (sol.y.size() != m + 1 || sol.z.size() != m)
    throw InvalidInput("representation_gap: solution does not match the grid");
  const double dt = s.grid().dt();

  std::vector<RandomVariable> drift(m);
  std::vector<double> mean_f(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double t = s.grid().time(k);
    auto b = s.brownian(k);
    RandomVariable c{k, std::vector<double>(b.size())};
    for (std::size_t j = 0; j < b.size(); ++j) c[j] = f(t, b[j], sol.y[k][j], sol.z[k][j]);
    mean_f[k] = expect(s, c);
    drift[k] = std::move(c);
  }

  RepresentationData out;
  out.ybar = unreflected_process(s, sol.y[m], drift).x;
  out.lbar.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.lbar[i] = lbar(e, l, s, out.ybar[i]);

  // F_s = sum_{k < s} E[f_k] dt; candidate(s) = F_s + (s == m ? E[xi] : lbar_s).
  std::vector<double> prefix(m + 1, 0.0);
  for (std::size_t k = 0; k < m; ++k) prefix[k + 1] = prefix[k] + mean_f[k] * dt;
  std::vector<double> best(m + 1);
  best[m] = prefix[m] + expect(s, sol.y[m]);
  for (std::size_t i = m; i-- > 0;) best[i] = std::max(best[i + 1], prefix[i] + out.lbar[i]);

  out.mean_y.resize(m + 1);
  out.gap.resize(m + 1);
  for (std::size_t i = 0; i <= m; ++i) {
    out.mean_y[i] = expect(s, sol.y[i]);
    out.gap[i] = out.mean_y[i] - (best[i] - prefix[i]);
    out.max_abs_gap = std::max(out.max_abs_gap, std::fabs(out.gap[i]));
  }
  return out;
}

/// Parameters (xi + c, f, l, E) of one side of a comparison.
struct ComparisonBundle {
  double c = 0.0;
  LossFunction loss;
  NonlinearExpectation expectation;
};

struct ComparisonInstance {
  const ScenarioSet* scenarios = nullptr;
  TerminalClaim xi;
  Driver f;
  bool driver_affine_in_y = true;  // f = a_t y + h(t, z), declared by the caller
  ComparisonBundle first;
  ComparisonBundle second;
  SolveOptions options;
  double tolerance = 1e-8;
  std::vector<double> competitor_bump;  // optional nondecreasing, starts at 0, length m+1
};

struct ComparisonReport {
  // hypotheses
  bool c_ordered = false;             // c1 >= c2
  bool loss_ordered = false;          // l1 <= l2 on the test lattice
  bool expectation_ordered = false;   // E2 >= E1 on sampled claims
  bool structure_ok = false;          // driver affine in y
  bool mean_hypotheses = false;       // classical E, l1 concave, l2 convex
  bool vacuous = true;

  bool pointwise_ok = false;
  bool mean_ok = false;
  double min_pointwise_gap = 0.0;     // min over nodes of Y1 - Y2
  double min_mean_gap = 0.0;          // min over i of E[Y1_i] - E[Y2_i]
  double max_pointwise_gap = 0.0;
  bool strict_witness = false;        // some gap exceeds 10x tolerance

  bool competitor_checked = false;
  bool competitor_feasible = false;
  bool competitor_ok = false;
  double competitor_min_gap = 0.0;    // min over nodes of Y' - Y

  ReflectedSolution first_solution;
  ReflectedSolution second_solution;
};

namespace detail {

inline bool losses_ordered(const LossFunction& l1, const LossFunction& l2, const TimeGrid& grid) {
  const std::vector<double> bs = (l1.random || l2.random) ? std::vector<double>{-2.0, 0.0, 2.0}
                                                          : std::vector<double>{0.0};
  for (std::size_t q = 0; q <= 4; ++q) {
    const double t = grid.time(q * grid.steps() / 4);
    for (double b : bs)
      for (double x = -10.0; x <= 10.0; x += 0.25)
        if (l1(t, b, x) > l2(t, b, x) + 1e-12) return false;
  }
  return true;
}

inline bool expectation_stronger(const NonlinearExpectation& strong, const NonlinearExpectation& weak,
                                 const ScenarioSet& s, double tol) {
  const std::size_t m = s.steps();
  std::vector<RandomVariable> claims;
  for (std::size_t i : {m / 2, m}) {
    claims.push_back(s.constant(i, 1.0));
    claims.push_back(s.constant(i, -1.0));
    claims.push_back(s.brownian_rv(i));
    claims.push_back(s.from_brownian(i, [](double b) { return b * b - 1.0; }));
    claims.push_back(s.from_brownian(i, [](double b) { return -std::fabs(b); }));
  }
  for (const auto& x : claims)
    if (eval_expectation(strong, s, x) < eval_expectation(weak, s, x) - tol) return false;
  return true;
}

}  // namespace detail

/// Solves both bundles on shared noise and reports the orderings.
inline ComparisonReport comparison_report(const ComparisonInstance& inst) {
  if (!inst.scenarios) throw InvalidInput("comparison_report: no scenario set");
  const ScenarioSet& s = *inst.scenarios;
  const std::size_t m = s.steps();
  const double tol = inst.tolerance;
  ComparisonReport r;

  r.c_ordered = inst.first.c >= inst.second.c;
  r.loss_ordered = detail::losses_ordered(inst.first.loss, inst.second.loss, s.grid());
  r.expectation_ordered =
      detail::expectation_stronger(inst.second.expectation, inst.first.expectation, s, 1e-10);
  r.structure_ok = inst.driver_affine_in_y;
  r.mean_hypotheses = inst.first.expectation.kind == ExpectationKind::classical &&
                      inst.second.expectation.kind == ExpectationKind::classical &&
                      (inst.first.loss.shape == LossShape::concave || inst.first.loss.shape == LossShape::linear) &&
                      (inst.second.loss.shape == LossShape::convex || inst.second.loss.shape == LossShape::linear) &&
                      r.loss_ordered && r.c_ordered && r.structure_ok;
  const bool pointwise_hypotheses = r.c_ordered && r.loss_ordered && r.expectation_ordered && r.structure_ok;
  r.vacuous = !pointwise_hypotheses && !r.mean_hypotheses;

  r.first_solution = solve_reflected(s, inst.xi + inst.first.c, inst.f, inst.first.loss,
                                     inst.first.expectation, inst.options);
  r.second_solution = solve_reflected(s, inst.xi + inst.second.c, inst.f, inst.second.loss,
                                      inst.second.expectation, inst.options);

  r.min_pointwise_gap = std::numeric_limits<double>::infinity();
  r.max_pointwise_gap = -std::numeric_limits<double>::infinity();
  r.min_mean_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= m; ++i) {
    const auto& y1 = r.first_solution.y[i];
    const auto& y2 = r.second_solution.y[i];
    for (std::size_t k = 0; k < y1.size(); ++k) {
      r.min_pointwise_gap = std::min(r.min_pointwise_gap, y1[k] - y2[k]);
      r.max_pointwise_gap = std::max(r.max_pointwise_gap, y1[k] - y2[k]);
    }
    r.min_mean_gap = std::min(r.min_mean_gap, expect(s, y1) - expect(s, y2));
  }
  r.pointwise_ok = r.min_pointwise_gap >= -tol;
  r.mean_ok = r.min_mean_gap >= -tol;
  r.strict_witness = r.max_pointwise_gap > 10.0 * tol;

  if (!inst.competitor_bump.empty()) {
    const auto& bump = inst.competitor_bump;
    if (bump.size() != m + 1 || bump[0] != 0.0)
      throw InvalidInput("comparison_report: competitor bump must have m+1 entries and start at 0");
    std::vector<double> inc(m);
    for (std::size_t i = 0; i < m; ++i) {
      inc[i] = r.first_solution.k.increment(i) + (bump[i + 1] - bump[i]);
      if (bump[i + 1] < bump[i]) throw InvalidInput("comparison_report: competitor bump must be nondecreasing");
    }
    const BsdePair competitor = solve_bsde(s, inst.xi + inst.first.c, inst.f, 0, inc);
    const MeanConstraint constraint(inst.first.expectation, inst.first.loss, s);
    r.competitor_checked = true;
    r.competitor_feasible = true;
    for (std::size_t i = 0; i <= m; ++i)
      if (constraint.value(competitor.y[i]) < -kFeasibilityTolerance) r.competitor_feasible = false;
    r.competitor_min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= m; ++i)
      for (std::size_t k = 0; k < competitor.y[i].size(); ++k)
        r.competitor_min_gap =
            std::min(r.competitor_min_gap, competitor.y[i][k] - r.first_solution.y[i][k]);
    r.competitor_ok = r.competitor_min_gap >= -tol;
  }
  return r;
}

/// Classical expectation, l(t, x) = x - u, driver -gamma, with
/// u < E[xi] < u + gamma T. The reflector is K_t = gamma (t ^ t*) where
/// E[xi] - gamma (T - t*) = u.
struct SwitchInstance {
  double gamma = 1.0;
  double u = 0.0;
  double alpha = 1.0;
  TerminalClaim xi;

  double switch_time(const ScenarioSet& s) const {
    return s.grid().horizon() - (expect(s, xi) - u) / gamma;
  }

  void validate(const ScenarioSet& s) const {
    s.check(xi);
    if (xi.index != s.steps()) throw InvalidInput("SwitchInstance: xi must live at T");
    if (!(gamma > 0.0)) throw InvalidInput("SwitchInstance: gamma must be > 0");
    const double mean = expect(s, xi);
    if (!(u < mean && mean < u + gamma * s.grid().horizon()))
      throw Infeasible("SwitchInstance: need u < E[xi] < u + gamma T");
  }

  Driver driver() const { return drivers::constant(-gamma); }
  LossFunction loss() const { return LossFunction::linear(u); }

  /// gamma (t_i ^ t*)
  std::vector<double> flow(const ScenarioSet& s) const {
    const double ts = switch_time(s);
    std::vector<double> k(s.steps() + 1);
    for (std::size_t i = 0; i <= s.steps(); ++i) k[i] = gamma * std::min(s.grid().time(i), ts);
    return k;
  }
};

struct NonminimalityReport {
  double switch_time = 0.0;
  std::vector<RandomVariable> y;        // closed-form minimal solution
  std::vector<RandomVariable> y_alpha;  // tilted solution
  std::vector<double> k;
  std::vector<double> k_alpha;          // sum_{k < i} M_k dK_k, nodewise mean
  double max_mean_difference = 0.0;     // max_i |E[Y^a_i] - E[Y_i]|
  double min_constraint = 0.0;          // min_i E[Y^a_i] - u
  double min_node_difference = 0.0;     // min over nodes of Y^a - Y
  std::size_t witness_index = 0;
  std::size_t witness_node = 0;
  bool has_witness = false;             // some node with Y^a < Y - 1e-6
};

/// Builds the tilted competitor Y^a = E_t[xi] - gamma (T - t) + M^a_t (K_T - K_t)
/// with M^a the exponential martingale of alpha B. On the tree M^a is the
/// exact discrete martingale exp(alpha B_i) / cosh(alpha sqrt(dt))^i.
inline NonminimalityReport nonminimality_demo(const SwitchInstance& inst,
                                                     const ScenarioSet& s) {
  inst.validate(s);
  const std::size_t m = s.steps();
  const double horizon = s.grid().horizon();
  const double dt = s.grid().dt();
  NonminimalityReport r;
  r.switch_time = inst.switch_time(s);
  r.k = inst.flow(s);

  const double a = inst.alpha;
  const double log_cosh = std::log(std::cosh(a * std::sqrt(dt)));
  r.y.resize(m + 1);
  r.y_alpha.resize(m + 1);
  r.k_alpha.assign(m + 1, 0.0);
  r.min_node_difference = std::numeric_limits<double>::infinity();
  r.min_constraint = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= m; ++i) {
    const double t = s.grid().time(i);
    const RandomVariable base = cond_expect(s, inst.xi, i) - inst.gamma * (horizon - t);
    const double remaining = r.k[m] - r.k[i];
    const RandomVariable mart = s.from_brownian(i, [&](double b) {
      return s.is_tree() ? std::exp(a * b - static_cast<double>(i) * log_cosh)
                         : std::exp(a * b - 0.5 * a * a * t);
    });
    r.y[i] = base + remaining;
    RandomVariable ya = base;
    for (std::size_t k = 0; k < ya.size(); ++k) ya[k] += mart[k] * remaining;
    r.y_alpha[i] = std::move(ya);
    if (i < m) r.k_alpha[i + 1] = r.k_alpha[i] + expect(s, mart) * (r.k[i + 1] - r.k[i]);

    const double my = expect(s, r.y[i]);
    const double mya = expect(s, r.y_alpha[i]);
    r.max_mean_difference = std::max(r.max_mean_difference, std::fabs(mya - my));
    r.min_constraint = std::min(r.min_constraint, mya - inst.u);
    for (std::size_t k = 0; k < r.y[i].size(); ++k) {
      const double d = r.y_alpha[i][k] - r.y[i][k];
      if (d < r.min_node_difference) {
        r.min_node_difference = d;
        r.witness_index = i;
        r.witness_node = k;
      }
    }
  }
  r.has_witness = r.min_node_difference < -1e-6;
  return r;
}

}  // namespace nerb
