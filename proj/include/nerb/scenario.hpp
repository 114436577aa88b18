#pragma once

// Discrete Brownian worlds: a recombining random-walk tree with exact
// conditional expectations, or a seeded path ensemble with least-squares
// regression conditional expectations.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nerb/errors.hpp"

namespace nerb {

/// Uniform partition 0 = t_0 < ... < t_m = T.
class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (steps == 0) throw InvalidInput("TimeGrid: step count must be at least 1");
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw InvalidInput("TimeGrid: horizon must be positive and finite");
    dt_ = horizon / static_cast<double>(steps);
  }

  double horizon() const { return horizon_; }
  std::size_t steps() const { return steps_; }
  double dt() const { return dt_; }

  // The last node is pinned to the horizon so that t_m - t_0 == T exactly.
  double time(std::size_t i) const {
    return i >= steps_ ? horizon_ : static_cast<double>(i) * dt_;
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  double horizon_;
  std::size_t steps_;
  double dt_;
};

enum class Backend { tree, montecarlo };

inline std::string to_string(Backend b) { return b == Backend::tree ? "tree" : "montecarlo"; }

/// An F_{t_i}-measurable random variable: one value per tree node at level i,
/// or one value per path.
struct RandomVariable {
  std::size_t index = 0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t k) const { return values[k]; }
  double& operator[](std::size_t k) { return values[k]; }
};

namespace detail {

inline void require_same_index(const RandomVariable& a, const RandomVariable& b, const char* what) {
  if (a.index != b.index || a.size() != b.size())
    throw InvalidInput(std::string(what) + ": random variables live at different indices");
}

}  // namespace detail

inline RandomVariable operator+(RandomVariable a, const RandomVariable& b) {
  detail::require_same_index(a, b, "operator+");
  for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
  return a;
}

inline RandomVariable operator-(RandomVariable a, const RandomVariable& b) {
  detail::require_same_index(a, b, "operator-");
  for (std::size_t k = 0; k < a.size(); ++k) a[k] -= b[k];
  return a;
}

inline RandomVariable operator*(RandomVariable a, const RandomVariable& b) {
  detail::require_same_index(a, b, "operator*");
  for (std::size_t k = 0; k < a.size(); ++k) a[k] *= b[k];
  return a;
}

inline RandomVariable operator+(RandomVariable a, double c) {
  for (auto& v : a.values) v += c;
  return a;
}

inline RandomVariable operator-(RandomVariable a, double c) { return std::move(a) + (-c); }

inline RandomVariable operator*(double c, RandomVariable a) {
  for (auto& v : a.values) v *= c;
  return a;
}

inline RandomVariable operator-(RandomVariable a) { return -1.0 * std::move(a); }

template <class Fn>
RandomVariable map(RandomVariable a, Fn&& fn) {
  for (auto& v : a.values) v = fn(v);
  return a;
}

inline RandomVariable abs(RandomVariable a) {
  return map(std::move(a), [](double v) { return std::fabs(v); });
}

inline bool all_finite(const RandomVariable& x) {
  for (double v : x.values)
    if (!std::isfinite(v)) return false;
  return true;
}

/// Immutable discretization of the filtered Brownian space.
///
/// Tree mode: level i holds the i+1 values (i - 2j) sqrt(dt), j = 0..i, of the
/// symmetric random walk; node j at level i moves to nodes j (up) and j+1
/// (down) at level i+1 with probability 1/2 each.
///
/// Monte Carlo mode: n_paths Brownian paths on the grid. Conditional
/// expectations one step back are least-squares projections onto the
/// monomials 1, b, ..., b^d of the current Brownian value.
class ScenarioSet {
 public:
  static constexpr double kRidge = 1e-10;

  const TimeGrid& grid() const { return grid_; }
  Backend backend() const { return backend_; }
  bool is_tree() const { return backend_ == Backend::tree; }
  std::size_t steps() const { return grid_.steps(); }
  std::size_t n_paths() const { return n_paths_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t basis_degree() const { return basis_degree_; }

  std::size_t support_size(std::size_t i) const {
    check_index(i);
    return is_tree() ? i + 1 : n_paths_;
  }

  /// Brownian values B_{t_i} on the support of level i.
  std::span<const double> brownian(std::size_t i) const {
    check_index(i);
    return brownian_[i];
  }

  /// Node probabilities at level i (tree) or uniform 1/n (ensemble).
  std::span<const double> probabilities(std::size_t i) const {
    check_index(i);
    return is_tree() ? std::span<const double>(probabilities_[i])
                     : std::span<const double>(uniform_);
  }

  RandomVariable constant(std::size_t i, double c) const {
    return RandomVariable{i, std::vector<double>(support_size(i), c)};
  }

  RandomVariable brownian_rv(std::size_t i) const {
    auto b = brownian(i);
    return RandomVariable{i, std::vector<double>(b.begin(), b.end())};
  }

  /// Random variable whose value at each node is fn(B_{t_i}).
  template <class Fn>
  RandomVariable from_brownian(std::size_t i, Fn&& fn) const {
    auto b = brownian(i);
    RandomVariable x{i, std::vector<double>(b.size())};
    for (std::size_t k = 0; k < b.size(); ++k) x[k] = fn(b[k]);
    return x;
  }

  void check(const RandomVariable& x) const {
    if (x.index > steps())
      throw InvalidInput("random variable index " + std::to_string(x.index) + " beyond grid");
    if (x.size() != support_size(x.index))
      throw InvalidInput("random variable at index " + std::to_string(x.index) + " has " +
                         std::to_string(x.size()) + " values, expected " +
                         std::to_string(support_size(x.index)));
  }

  /// E_{i-1}[X] for X at index i >= 1.
  RandomVariable step_back(const RandomVariable& x) const {
    check(x);
    if (x.index == 0) throw InvalidInput("step_back: already at index 0");
    const std::size_t i = x.index - 1;
    if (is_tree()) {
      RandomVariable out{i, std::vector<double>(i + 1)};
      for (std::size_t j = 0; j <= i; ++j) out[j] = 0.5 * (x[j] + x[j + 1]);
      return out;
    }
    return project(i, x.values);
  }

  /// E_i[X (B_{t_{i+1}} - B_{t_i})] / dt for X at index i+1: the martingale
  /// integrand of X over one step.
  RandomVariable martingale_density(const RandomVariable& x) const {
    check(x);
    if (x.index == 0) throw InvalidInput("martingale_density: needs index >= 1");
    const std::size_t i = x.index - 1;
    if (is_tree()) {
      const double denom = 2.0 * std::sqrt(grid_.dt());
      RandomVariable out{i, std::vector<double>(i + 1)};
      for (std::size_t j = 0; j <= i; ++j) out[j] = (x[j] - x[j + 1]) / denom;
      return out;
    }
    // Centre on the projected mean first: the subtracted term has zero
    // conditional covariance with the increment and removes most of the noise.
    const RandomVariable mean = project(i, x.values);
    std::vector<double> target(n_paths_);
    const auto& b0 = brownian_[i];
    const auto& b1 = brownian_[i + 1];
    for (std::size_t p = 0; p < n_paths_; ++p)
      target[p] = (x[p] - mean[p]) * (b1[p] - b0[p]) / grid_.dt();
    return project(i, target);
  }

  /// Least-squares projection of per-path values onto the basis at index i.
  RandomVariable project(std::size_t i, std::span<const double> target) const {
    const auto& b = brownian_[i];
    const std::size_t d = basis_degree_ + 1;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t p = 0; p < n_paths_; ++p) {
      double pw = 1.0;
      for (std::size_t k = 0; k < d; ++k) {
        rhs[static_cast<Eigen::Index>(k)] += pw * target[p];
        pw *= b[p];
      }
    }
    rhs /= static_cast<double>(n_paths_);
    const Eigen::VectorXd coef = gram_[i].solve(rhs);
    RandomVariable out{i, std::vector<double>(n_paths_)};
    for (std::size_t p = 0; p < n_paths_; ++p) {
      double pw = 1.0, v = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        v += coef[static_cast<Eigen::Index>(k)] * pw;
        pw *= b[p];
      }
      out[p] = v;
    }
    return out;
  }

 private:
  friend ScenarioSet build_scenarios(const TimeGrid&, Backend, std::size_t, std::uint64_t,
                                     std::size_t);

  explicit ScenarioSet(const TimeGrid& grid) : grid_(grid) {}

  void check_index(std::size_t i) const {
    if (i > steps()) throw InvalidInput("time index " + std::to_string(i) + " beyond grid");
  }

  TimeGrid grid_;
  Backend backend_ = Backend::tree;
  std::size_t n_paths_ = 0;
  std::uint64_t seed_ = 0;
  std::size_t basis_degree_ = 0;
  std::vector<std::vector<double>> brownian_;
  std::vector<std::vector<double>> probabilities_;
  std::vector<double> uniform_;
  std::vector<Eigen::LDLT<Eigen::MatrixXd>> gram_;
};

/// Builds a scenario set. Tree mode ignores n_paths, seed and basis_degree.
inline ScenarioSet build_scenarios(const TimeGrid& grid, Backend mode, std::size_t n_paths = 0,
                                   std::uint64_t seed = 0, std::size_t basis_degree = 3) {
  ScenarioSet s(grid);
  s.backend_ = mode;
  const std::size_t m = grid.steps();
  const double sq = std::sqrt(grid.dt());
  s.brownian_.resize(m + 1);

  if (mode == Backend::tree) {
    s.probabilities_.resize(m + 1);
    s.probabilities_[0] = {1.0};
    for (std::size_t i = 0; i <= m; ++i) {
      auto& level = s.brownian_[i];
      level.resize(i + 1);
      for (std::size_t j = 0; j <= i; ++j)
        level[j] = (static_cast<double>(i) - 2.0 * static_cast<double>(j)) * sq;
      if (i > 0) {
        const auto& prev = s.probabilities_[i - 1];
        auto& p = s.probabilities_[i];
        p.assign(i + 1, 0.0);
        for (std::size_t j = 0; j < i; ++j) {
          p[j] += 0.5 * prev[j];
          p[j + 1] += 0.5 * prev[j];
        }
      }
    }
    return s;
  }

  if (n_paths < 2) throw InvalidInput("build_scenarios: montecarlo mode needs n_paths >= 2");
  if (basis_degree < 1) throw InvalidInput("build_scenarios: montecarlo mode needs basis_degree >= 1");
  s.n_paths_ = n_paths;
  s.seed_ = seed;
  s.basis_degree_ = basis_degree;
  s.uniform_.assign(n_paths, 1.0 / static_cast<double>(n_paths));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& col : s.brownian_) col.assign(n_paths, 0.0);
  for (std::size_t p = 0; p < n_paths; ++p)
    for (std::size_t i = 1; i <= m; ++i)
      s.brownian_[i][p] = s.brownian_[i - 1][p] + sq * normal(rng);

  const std::size_t d = basis_degree + 1;
  s.gram_.reserve(m + 1);
  for (std::size_t i = 0; i <= m; ++i) {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(d));
    for (std::size_t p = 0; p < n_paths; ++p) {
      double pw = 1.0;
      for (std::size_t k = 0; k < d; ++k) {
        a(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)) = pw;
        pw *= s.brownian_[i][p];
      }
    }
    Eigen::MatrixXd gram = a.transpose() * a / static_cast<double>(n_paths);
    gram.diagonal().array() += ScenarioSet::kRidge;
    s.gram_.emplace_back(gram);
  }
  return s;
}

/// Classical expectation: exact weighted sum (tree) or sample mean.
inline double expect(const ScenarioSet& s, const RandomVariable& x) {
  s.check(x);
  auto p = s.probabilities(x.index);
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) acc += p[k] * x[k];
  return acc;
}

/// Monte Carlo standard error of the sample mean; zero on the tree.
inline double standard_error(const ScenarioSet& s, const RandomVariable& x) {
  if (s.is_tree()) return 0.0;
  const double mean = expect(s, x);
  double ss = 0.0;
  for (double v : x.values) ss += (v - mean) * (v - mean);
  const double n = static_cast<double>(x.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

/// E_{t_i}[X] for X at index j >= i.
inline RandomVariable cond_expect(const ScenarioSet& s, const RandomVariable& x, std::size_t i) {
  s.check(x);
  if (i > x.index)
    throw InvalidInput("cond_expect: target index " + std::to_string(i) + " after source index " +
                       std::to_string(x.index));
  RandomVariable out = x;
  while (out.index > i) out = s.step_back(out);
  return out;
}

/// Girsanov density exp(theta B_T - theta^2 T / 2), renormalized to mean one
/// under the scenario measure.
inline RandomVariable girsanov_weights(const ScenarioSet& s, double theta) {
  if (!std::isfinite(theta)) throw InvalidInput("girsanov_weights: non-finite kernel");
  const std::size_t m = s.steps();
  const double horizon = s.grid().horizon();
  RandomVariable w = s.from_brownian(
      m, [&](double b) { return std::exp(theta * b - 0.5 * theta * theta * horizon); });
  const double mean = expect(s, w);
  for (auto& v : w.values) v /= mean;
  return w;
}

/// E^{P^theta}[X] for the tilted measure with terminal density `weights`.
inline double tilted_expect(const ScenarioSet& s, const RandomVariable& weights,
                            const RandomVariable& x) {
  if (weights.index != s.steps()) throw InvalidInput("tilted_expect: weights must be terminal");
  if (s.is_tree()) return expect(s, cond_expect(s, weights, x.index) * x);
  s.check(x);
  double acc = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p) acc += weights[p] * x[p];
  return acc / static_cast<double>(x.size());
}

}  // namespace nerb
