#pragma once

// Backward solver for Y_t = xi + int_t^T f(s, Y_s, Z_s) ds - int_t^T Z_s dB_s.
//
// One step of the scheme, explicit in z and implicit in y:
//   z_i = E_i[y_{i+1} dB_i] / dt
//   y_i = E_i[y_{i+1}] + f(t_i, B_i, y_i, z_i) dt (+ dK_i)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nerb/errors.hpp"
#include "nerb/scenario.hpp"

namespace nerb {

struct Driver {
  std::function<double(double t, double b, double y, double z)> eval;
  double lipschitz = 0.0;
  bool depends_on_y = false;
  bool depends_on_z = false;
  bool depends_on_b = false;

  double operator()(double t, double b, double y, double z) const { return eval(t, b, y, z); }

  void validate() const {
    if (!eval) throw InvalidInput("Driver: missing evaluator");
    if ((depends_on_y || depends_on_z) && !(lipschitz > 0.0))
      throw InvalidInput("Driver: Lipschitz constant must be positive when f depends on (y, z)");
  }
};

namespace drivers {

inline Driver zero() {
  return {[](double, double, double, double) { return 0.0; }};
}

inline Driver constant(double c) {
  return {[c](double, double, double, double) { return c; }};
}

/// kappa (|y| + |z|); a negative kappa gives the lower driver of G^{-|kappa|}.
inline Driver abs_yz(double kappa) {
  return {[kappa](double, double, double y, double z) { return kappa * (std::fabs(y) + std::fabs(z)); },
          std::fabs(kappa), kappa != 0.0, kappa != 0.0};
}

/// kappa |z|; constant preserving.
inline Driver abs_z(double kappa) {
  return {[kappa](double, double, double, double z) { return kappa * std::fabs(z); },
          std::fabs(kappa), false, kappa != 0.0};
}

/// a y + b z + c.
inline Driver linear(double a, double bz, double c = 0.0) {
  return {[a, bz, c](double, double, double y, double z) { return a * y + bz * z + c; },
          std::max(std::fabs(a), std::fabs(bz)), a != 0.0, bz != 0.0};
}

}  // namespace drivers

using TerminalClaim = RandomVariable;

/// Y at every index in [first, terminal index]; Z on [first, terminal index).
/// Entries outside the window are left empty.
struct BsdePair {
  std::size_t first = 0;
  std::vector<RandomVariable> y;
  std::vector<RandomVariable> z;
};

inline constexpr std::size_t kMaxInnerSweeps = 50;

namespace detail {

// Solves y = base + f(y) dt by fixed-point sweeps.
inline double implicit_step(const Driver& f, double t, double b, double base, double z, double dt) {
  double y = base + f(t, b, base, z) * dt;
  if (!f.depends_on_y) return y;
  for (std::size_t sweep = 0; sweep < kMaxInnerSweeps; ++sweep) {
    const double next = base + f(t, b, y, z) * dt;
    const double change = std::fabs(next - y);
    y = next;
    if (change <= 1e-15 * std::max(1.0, std::fabs(y))) return y;
  }
  throw NumericalFailure("solve_bsde: inner fixed point did not converge at t=" + std::to_string(t));
}

}  // namespace detail

/// Solves the BSDE on [t_first, t_j] with terminal value at index j.
/// `increments`, if given, adds deterministic dK_k for k = first..j-1.
inline BsdePair solve_bsde(const ScenarioSet& s, const RandomVariable& terminal, const Driver& f,
                           std::size_t first = 0, std::span<const double> increments = {}) {
  f.validate();
  s.check(terminal);
  if (!all_finite(terminal)) throw InvalidInput("solve_bsde: terminal value is not finite");
  const std::size_t last = terminal.index;
  if (first > last) throw InvalidInput("solve_bsde: first index after terminal index");
  if (!increments.empty() && increments.size() != last - first)
    throw InvalidInput("solve_bsde: increment count does not match the window");
  const double dt = s.grid().dt();
  if (f.depends_on_y && f.lipschitz * dt >= 1.0)
    throw InvalidInput("solve_bsde: lambda * dt >= 1, inner iteration is not contractive");

  BsdePair out;
  out.first = first;
  out.y.resize(last + 1);
  out.z.resize(last);
  out.y[last] = terminal;
  for (std::size_t i = last; i-- > first;) {
    const RandomVariable& next = out.y[i + 1];
    RandomVariable mean = s.step_back(next);
    RandomVariable z = s.martingale_density(next);
    const double t = s.grid().time(i);
    const double dk = increments.empty() ? 0.0 : increments[i - first];
    auto b = s.brownian(i);
    for (std::size_t k = 0; k < mean.size(); ++k)
      mean[k] = detail::implicit_step(f, t, b[k], mean[k] + dk, z[k], dt);
    out.y[i] = std::move(mean);
    out.z[i] = std::move(z);
  }
  return out;
}

}  // namespace nerb
