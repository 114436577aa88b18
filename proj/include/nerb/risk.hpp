#pragma once

// Risk-measure reflection q_t - rho(t, Y_t) >= 0 and the superhedging price
// under a running risk constraint.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nerb/bsde.hpp"
#include "nerb/errors.hpp"
#include "nerb/picard.hpp"
#include "nerb/reflection.hpp"
#include "nerb/scenario.hpp"

namespace nerb {

/// Constant Girsanov kernels theta_k with penalties F(theta_k) >= 0.
struct KernelSet {
  std::vector<double> kernels;
  std::vector<double> penalties;  // empty means all zero

  double penalty(std::size_t k) const { return penalties.empty() ? 0.0 : penalties[k]; }
};

/// rho(t, X) = max_k { E^{P^theta_k}[-X] - F(theta_k) }.
struct RiskMeasure {
  KernelSet base;
  std::vector<KernelSet> schedule;  // optional, one per grid index
  double kappa = 0.0;
  double scale = 1.0;

  static RiskMeasure coherent(std::vector<double> kernels, double kappa) {
    RiskMeasure r;
    r.base.kernels = std::move(kernels);
    r.kappa = kappa;
    return r;
  }

  static RiskMeasure convex(std::vector<double> kernels, std::vector<double> penalties, double kappa) {
    RiskMeasure r = coherent(std::move(kernels), kappa);
    r.base.penalties = std::move(penalties);
    return r;
  }

  const KernelSet& at(std::size_t i) const { return schedule.empty() ? base : schedule.at(i); }

  bool is_coherent() const {
    auto zero = [](const KernelSet& ks) {
      return std::all_of(ks.penalties.begin(), ks.penalties.end(), [](double p) { return p == 0.0; });
    };
    return zero(base) && std::all_of(schedule.begin(), schedule.end(), zero);
  }

  void validate(const TimeGrid& grid) const {
    if (!(kappa >= 0.0)) throw InvalidInput("RiskMeasure: kappa must be >= 0");
    if (!(scale > 0.0)) throw InvalidInput("RiskMeasure: scale must be > 0");
    if (!schedule.empty() && schedule.size() != grid.steps() + 1)
      throw InvalidInput("RiskMeasure: schedule needs one kernel set per grid index");
    auto check = [&](const KernelSet& ks) {
      if (ks.kernels.empty()) throw InvalidInput("RiskMeasure: empty kernel list");
      if (!ks.penalties.empty() && ks.penalties.size() != ks.kernels.size())
        throw InvalidInput("RiskMeasure: penalty count differs from kernel count");
      for (double th : ks.kernels)
        if (!std::isfinite(th) || std::fabs(th) > kappa * (1.0 + 1e-12))
          throw InvalidInput("RiskMeasure: kernel " + std::to_string(th) + " outside [-kappa, kappa]");
      for (double p : ks.penalties)
        if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidInput("RiskMeasure: penalties must be >= 0");
    };
    check(base);
    for (const auto& ks : schedule) check(ks);
  }
};

/// Evaluates rho on a fixed scenario set; tilted densities are built once.
class RiskEvaluator {
 public:
  RiskEvaluator(RiskMeasure rho, const ScenarioSet& s) : rho_(std::move(rho)), s_(&s) {
    rho_.validate(s.grid());
    auto add = [&](const KernelSet& ks) {
      for (double th : ks.kernels)
        if (!densities_.count(th)) densities_.emplace(th, density_process(th));
    };
    add(rho_.base);
    for (const auto& ks : rho_.schedule) add(ks);
  }

  const RiskMeasure& measure() const { return rho_; }

  /// rho(t_i, X) for X at index i.
  double operator()(const RandomVariable& x) const {
    s_->check(x);
    const KernelSet& ks = rho_.at(x.index);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ks.kernels.size(); ++k) {
      const auto& dens = densities_.at(ks.kernels[k]);
      const RandomVariable& w = s_->is_tree() ? dens[x.index] : dens.back();
      double acc = 0.0;
      if (s_->is_tree()) {
        auto p = s_->probabilities(x.index);
        for (std::size_t j = 0; j < x.size(); ++j) acc += p[j] * w[j] * (-x[j]);
      } else {
        for (std::size_t j = 0; j < x.size(); ++j) acc += w[j] * (-x[j]);
        acc /= static_cast<double>(x.size());
      }
      best = std::max(best, acc - ks.penalty(k));
    }
    return best;
  }

 private:
  // Tree: E_i[W_T] for every i. Ensemble: the terminal weights only.
  std::vector<RandomVariable> density_process(double theta) const {
    RandomVariable w = girsanov_weights(*s_, theta);
    if (!s_->is_tree()) return {std::move(w)};
    std::vector<RandomVariable> out(s_->steps() + 1);
    out[s_->steps()] = std::move(w);
    for (std::size_t i = s_->steps(); i-- > 0;) out[i] = s_->step_back(out[i + 1]);
    return out;
  }

  RiskMeasure rho_;
  const ScenarioSet* s_;
  std::map<double, std::vector<RandomVariable>> densities_;
};

inline double rho_eval(const RiskMeasure& rho, const ScenarioSet& s, std::size_t i,
                       const RandomVariable& x) {
  if (x.index != i) throw InvalidInput("rho_eval: X does not live at the requested index");
  return RiskEvaluator(rho, s)(x);
}

/// Deterministic benchmark q_i on the grid.
struct Benchmark {
  std::vector<double> values;

  double operator[](std::size_t i) const { return values[i]; }

  static Benchmark constant(const TimeGrid& grid, double q) {
    return {std::vector<double>(grid.steps() + 1, q)};
  }

  /// Piecewise-linear interpolation through (t, q) knots, flat outside.
  static Benchmark from_knots(const TimeGrid& grid, std::vector<std::pair<double, double>> knots) {
    if (knots.empty()) throw InvalidInput("Benchmark: no knots");
    std::sort(knots.begin(), knots.end());
    Benchmark b;
    b.values.resize(grid.steps() + 1);
    for (std::size_t i = 0; i <= grid.steps(); ++i) {
      const double t = grid.time(i);
      if (t <= knots.front().first) {
        b.values[i] = knots.front().second;
      } else if (t >= knots.back().first) {
        b.values[i] = knots.back().second;
      } else {
        auto hi = std::upper_bound(knots.begin(), knots.end(), t,
                                   [](double v, const auto& kn) { return v < kn.first; });
        auto lo = hi - 1;
        const double w = (t - lo->first) / (hi->first - lo->first);
        b.values[i] = (1.0 - w) * lo->second + w * hi->second;
      }
    }
    for (double v : b.values)
      if (!std::isfinite(v)) throw InvalidInput("Benchmark: non-finite value");
    return b;
  }
};

/// (rho(t_i, X) - q_i)^+; explicit because rho(X + x) = rho(X) - x.
inline double tilde_L(const RiskMeasure& rho, const Benchmark& q, const ScenarioSet& s,
                      std::size_t i, const RandomVariable& x) {
  if (x.index != i) throw InvalidInput("tilde_L: X does not live at the requested index");
  return std::max(rho_eval(rho, s, i, x) - q[i], 0.0);
}

/// q_t - rho(t, Y_t) >= 0.
class RiskConstraint {
 public:
  RiskConstraint(RiskMeasure rho, Benchmark q, const ScenarioSet& s)
      : eval_(std::move(rho), s), q_(std::move(q)) {
    if (q_.values.size() != s.steps() + 1)
      throw InvalidInput("RiskConstraint: benchmark length differs from the grid");
  }

  double shift(const RandomVariable& x) const { return std::max(eval_(x) - q_[x.index], 0.0); }
  double value(const RandomVariable& y) const { return q_[y.index] - eval_(y); }
  double kappa() const { return eval_.measure().kappa; }
  double lipschitz_ratio() const { return eval_.measure().scale; }

  double rho(const RandomVariable& x) const { return eval_(x); }

 private:
  RiskEvaluator eval_;
  Benchmark q_;
};

inline ReflectedSolution solve_risk_reflected(const ScenarioSet& s, const TerminalClaim& xi,
                                              const Driver& f, const RiskMeasure& rho,
                                              const Benchmark& q, const SolveOptions& opts = {}) {
  return solve_reflected(s, xi, f, RiskConstraint(rho, q, s), opts);
}

struct Market {
  double r = 0.0;
  double mu = 0.0;
  double sigma = 1.0;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidInput("Market: sigma must be > 0");
    if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidInput("Market: r must be >= 0");
    if (!std::isfinite(mu)) throw InvalidInput("Market: mu must be finite");
  }

  double market_price_of_risk() const { return (mu - r) / sigma; }

  /// f(t, y, z) = -(r y + (mu - r) / sigma z).
  Driver pricing_driver() const { return drivers::linear(-r, -market_price_of_risk()); }
};

struct SuperhedgeResult {
  double price = 0.0;  // Y_0, the candidate superhedging price
  ReflectedSolution solution;
  std::vector<std::vector<double>> hedge;  // pi_i per node, NaN where |Y_i| <= 1e-12
};

inline SuperhedgeResult superhedge_price(const Market& market, const ScenarioSet& s,
                                         const TerminalClaim& xi, const RiskMeasure& rho,
                                         const Benchmark& q, const SolveOptions& opts = {}) {
  market.validate();
  SuperhedgeResult out;
  out.solution = solve_risk_reflected(s, xi, market.pricing_driver(), rho, q, opts);
  out.price = expect(s, out.solution.y[0]);
  out.hedge.resize(s.steps());
  for (std::size_t i = 0; i < s.steps(); ++i) {
    const auto& y = out.solution.y[i];
    const auto& z = out.solution.z[i];
    auto& h = out.hedge[i];
    h.resize(y.size());
    for (std::size_t k = 0; k < y.size(); ++k)
      h[k] = std::fabs(y[k]) > 1e-12 ? z[k] / (market.sigma * y[k])
                                      : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace nerb
