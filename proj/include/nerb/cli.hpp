#pragma once

// Batch front end: JSON run configuration -> solver dispatch -> CSV artifacts.
//
// Exit codes
//   0  success
//   1  configuration/schema error or invalid parameter
//   2  infeasible problem (terminal value violates the constraint)
//   3  Picard divergence
//   4  other numerical failure (root bracket, inner fixed point)
//   5  verify: at least one check failed

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nerb/bsde.hpp"
#include "nerb/errors.hpp"
#include "nerb/expectation.hpp"
#include "nerb/expr.hpp"
#include "nerb/picard.hpp"
#include "nerb/reflection.hpp"
#include "nerb/report.hpp"
#include "nerb/risk.hpp"
#include "nerb/scenario.hpp"
#include "nerb/verify.hpp"

namespace nerb::cli {

using json = nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kInfeasible = 2,
  kDivergence = 3,
  kNumerical = 4,
  kCheckFailed = 5,
};

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

enum class Command { solve, gexp, price, verify };

inline std::optional<Command> parse_command(const std::string& s) {
  if (s == "solve") return Command::solve;
  if (s == "gexp") return Command::gexp;
  if (s == "price") return Command::price;
  if (s == "verify") return Command::verify;
  return std::nullopt;
}

inline const char* to_string(Command c) {
  switch (c) {
    case Command::solve: return "solve";
    case Command::gexp: return "gexp";
    case Command::price: return "price";
    case Command::verify: return "verify";
  }
  return "?";
}

struct ScenarioSpec {
  double horizon = 1.0;
  std::size_t steps = 100;
  Backend mode = Backend::tree;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 0;
  std::size_t basis_degree = 3;
};

struct DriverSpec {
  std::string expr = "0";
  double lipschitz = 0.0;
};

struct LossSpec {
  std::string expr = "x";
  double c_lower = 1.0;
  double c_upper = 1.0;
  LossShape shape = LossShape::general;
};

struct ExpectationSpec {
  ExpectationKind kind = ExpectationKind::classical;
  DriverSpec driver;
  double kappa = 0.0;
  double alpha = 1.0;
  double scale = 1.0;
  std::size_t kernel_grid = 21;
};

struct RiskSpec {
  std::vector<double> kernels{0.0};
  std::vector<double> penalties;
  double kappa = 0.0;
  double scale = 1.0;
};

struct SwitchSpec {
  double gamma = 1.0;
  double u = 0.0;
  double alpha = 1.0;
};

struct RunConfig {
  Command command = Command::solve;
  ScenarioSpec scenario;
  std::string payoff = "b";
  DriverSpec driver;
  LossSpec loss;
  ExpectationSpec expectation;
  std::optional<RiskSpec> risk;
  std::vector<std::pair<double, double>> benchmark;
  std::optional<Market> market;
  SolveOptions solver;
  bool want_lbar = false;
  std::string preset = "switch";
  SwitchSpec instance;
  std::string digest;  // FNV-1a of the canonical configuration
};

namespace detail {

inline std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void allow_keys(const json& obj, const std::string& path, std::set<std::string> keys) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!keys.count(it.key()))
      throw ConfigError("unknown key '" + (path.empty() ? it.key() : path + "." + it.key()) + "'");
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline double get_number(const json& obj, const std::string& path, const std::string& key,
                         std::optional<double> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError("missing required key '" + join(path, key) + "'");
  }
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError("key '" + join(path, key) + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError("key '" + join(path, key) + "' must be finite");
  return d;
}

inline std::size_t get_count(const json& obj, const std::string& path, const std::string& key,
                             std::optional<std::size_t> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError("missing required key '" + join(path, key) + "'");
  }
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("key '" + join(path, key) + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::string get_string(const json& obj, const std::string& path, const std::string& key,
                              std::optional<std::string> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError("missing required key '" + join(path, key) + "'");
  }
  const json& v = obj.at(key);
  if (!v.is_string()) throw ConfigError("key '" + join(path, key) + "' must be a string");
  return v.get<std::string>();
}

inline std::vector<double> get_numbers(const json& obj, const std::string& path, const std::string& key) {
  const json& v = obj.at(key);
  if (!v.is_array()) throw ConfigError("key '" + join(path, key) + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError("key '" + join(path, key) + "' must be an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

inline DriverSpec parse_driver(const json& obj, const std::string& path) {
  allow_keys(obj, path, {"expr", "lipschitz"});
  DriverSpec d;
  d.expr = get_string(obj, path, "expr");
  const Expression e = Expression::parse(d.expr);
  if (e.uses(Expression::Var::x)) throw ConfigError("key '" + path + ".expr' may not use variable x");
  const bool needs_lambda = e.uses(Expression::Var::y) || e.uses(Expression::Var::z);
  d.lipschitz = needs_lambda ? get_number(obj, path, "lipschitz") : get_number(obj, path, "lipschitz", 0.0);
  if (needs_lambda && !(d.lipschitz > 0.0))
    throw ConfigError("key '" + path + ".lipschitz' must be > 0 for a driver depending on y or z");
  if (d.lipschitz < 0.0) throw ConfigError("key '" + path + ".lipschitz' must be >= 0");
  return d;
}

inline void parse_scenario(const json& obj, ScenarioSpec& s) {
  const std::string path = "scenario";
  allow_keys(obj, path, {"T", "m", "mode", "n_paths", "seed", "basis_degree"});
  s.horizon = get_number(obj, path, "T");
  if (!(s.horizon > 0.0)) throw ConfigError("key 'scenario.T' must be > 0");
  s.steps = get_count(obj, path, "m");
  if (s.steps == 0) throw ConfigError("key 'scenario.m' must be >= 1");
  const std::string mode = get_string(obj, path, "mode", std::string("tree"));
  if (mode == "tree") s.mode = Backend::tree;
  else if (mode == "montecarlo") s.mode = Backend::montecarlo;
  else throw ConfigError("key 'scenario.mode' must be 'tree' or 'montecarlo'");
  s.n_paths = get_count(obj, path, "n_paths", std::size_t{10000});
  s.seed = get_count(obj, path, "seed", std::size_t{0});
  s.basis_degree = get_count(obj, path, "basis_degree", std::size_t{3});
  if (s.mode == Backend::montecarlo) {
    if (s.n_paths < 2) throw ConfigError("key 'scenario.n_paths' must be >= 2");
    if (s.basis_degree < 1) throw ConfigError("key 'scenario.basis_degree' must be >= 1");
  }
}

inline void parse_expectation(const json& obj, ExpectationSpec& e) {
  const std::string path = "problem.expectation";
  allow_keys(obj, path, {"kind", "driver", "kappa", "alpha", "scale", "kernel_grid"});
  const std::string kind = get_string(obj, path, "kind", std::string("classical"));
  if (kind == "classical") e.kind = ExpectationKind::classical;
  else if (kind == "gexp") e.kind = ExpectationKind::gexp;
  else if (kind == "alpha_maxmin") e.kind = ExpectationKind::alpha_maxmin;
  else throw ConfigError("key 'problem.expectation.kind' must be classical, gexp or alpha_maxmin");
  if (e.kind == ExpectationKind::gexp) {
    if (!obj.contains("driver")) throw ConfigError("missing required key 'problem.expectation.driver'");
    e.driver = parse_driver(obj.at("driver"), path + ".driver");
    if (Expression::parse(e.driver.expr).uses(Expression::Var::b))
      throw ConfigError("key 'problem.expectation.driver.expr' may not use variable b");
  }
  const double default_kappa = e.kind == ExpectationKind::gexp ? e.driver.lipschitz : 0.0;
  e.kappa = get_number(obj, path, "kappa", e.kind == ExpectationKind::alpha_maxmin
                                               ? std::nullopt
                                               : std::optional<double>(default_kappa));
  if (e.kappa < 0.0) throw ConfigError("key 'problem.expectation.kappa' must be >= 0");
  e.alpha = get_number(obj, path, "alpha", 1.0);
  if (e.alpha < 0.0 || e.alpha > 1.0) throw ConfigError("key 'problem.expectation.alpha' must lie in [0, 1]");
  e.scale = get_number(obj, path, "scale", 1.0);
  if (!(e.scale > 0.0)) throw ConfigError("key 'problem.expectation.scale' must be > 0");
  e.kernel_grid = get_count(obj, path, "kernel_grid", std::size_t{21});
}

inline void parse_problem(const json& obj, RunConfig& c) {
  const std::string path = "problem";
  allow_keys(obj, path, {"payoff", "driver", "loss", "expectation", "risk", "benchmark", "market"});
  c.payoff = get_string(obj, path, "payoff", c.command == Command::verify ? std::optional<std::string>("b + 0.5")
                                                                          : std::nullopt);
  const Expression payoff = Expression::parse(c.payoff);
  if (payoff.uses(Expression::Var::y) || payoff.uses(Expression::Var::z) || payoff.uses(Expression::Var::x))
    throw ConfigError("key 'problem.payoff' may only use variables t and b");

  if (obj.contains("driver")) c.driver = parse_driver(obj.at("driver"), "problem.driver");

  if (obj.contains("loss")) {
    const json& l = obj.at("loss");
    allow_keys(l, "problem.loss", {"expr", "c_lower", "c_upper", "shape"});
    c.loss.expr = get_string(l, "problem.loss", "expr");
    const Expression e = Expression::parse(c.loss.expr);
    if (!e.uses(Expression::Var::x)) throw ConfigError("key 'problem.loss.expr' must use variable x");
    if (e.uses(Expression::Var::y) || e.uses(Expression::Var::z))
      throw ConfigError("key 'problem.loss.expr' may only use variables t, b and x");
    c.loss.c_lower = get_number(l, "problem.loss", "c_lower");
    c.loss.c_upper = get_number(l, "problem.loss", "c_upper");
    if (!(c.loss.c_lower > 0.0) || c.loss.c_upper < c.loss.c_lower)
      throw ConfigError("keys 'problem.loss.c_lower' and 'problem.loss.c_upper' need 0 < c_lower <= c_upper");
    const std::string shape = get_string(l, "problem.loss", "shape", std::string("general"));
    if (shape == "linear") c.loss.shape = LossShape::linear;
    else if (shape == "concave") c.loss.shape = LossShape::concave;
    else if (shape == "convex") c.loss.shape = LossShape::convex;
    else if (shape == "general") c.loss.shape = LossShape::general;
    else throw ConfigError("key 'problem.loss.shape' must be linear, concave, convex or general");
  } else if (c.command == Command::solve) {
    throw ConfigError("missing required key 'problem.loss'");
  }

  if (obj.contains("expectation")) parse_expectation(obj.at("expectation"), c.expectation);
  else if (c.command == Command::gexp) throw ConfigError("missing required key 'problem.expectation'");

  if (obj.contains("risk")) {
    const json& r = obj.at("risk");
    const std::string rp = "problem.risk";
    allow_keys(r, rp, {"kernels", "penalties", "kappa", "scale"});
    RiskSpec spec;
    if (!r.contains("kernels")) throw ConfigError("missing required key 'problem.risk.kernels'");
    spec.kernels = get_numbers(r, rp, "kernels");
    if (spec.kernels.empty()) throw ConfigError("key 'problem.risk.kernels' must not be empty");
    if (r.contains("penalties")) spec.penalties = get_numbers(r, rp, "penalties");
    if (!spec.penalties.empty() && spec.penalties.size() != spec.kernels.size())
      throw ConfigError("key 'problem.risk.penalties' must match 'problem.risk.kernels' in length");
    spec.kappa = get_number(r, rp, "kappa");
    if (spec.kappa < 0.0) throw ConfigError("key 'problem.risk.kappa' must be >= 0");
    spec.scale = get_number(r, rp, "scale", 1.0);
    c.risk = spec;
  } else if (c.command == Command::price) {
    throw ConfigError("missing required key 'problem.risk'");
  }

  if (obj.contains("benchmark")) {
    const json& b = obj.at("benchmark");
    if (!b.is_array() || b.empty()) throw ConfigError("key 'problem.benchmark' must be a non-empty array of [t, q]");
    for (const auto& kn : b) {
      if (!kn.is_array() || kn.size() != 2 || !kn[0].is_number() || !kn[1].is_number())
        throw ConfigError("key 'problem.benchmark' entries must be [t, q] number pairs");
      c.benchmark.emplace_back(kn[0].get<double>(), kn[1].get<double>());
    }
  } else if (c.command == Command::price) {
    throw ConfigError("missing required key 'problem.benchmark'");
  }

  if (obj.contains("market")) {
    const json& mk = obj.at("market");
    allow_keys(mk, "problem.market", {"r", "mu", "sigma"});
    Market m;
    m.r = get_number(mk, "problem.market", "r");
    m.mu = get_number(mk, "problem.market", "mu");
    m.sigma = get_number(mk, "problem.market", "sigma");
    if (!(m.sigma > 0.0)) throw ConfigError("key 'problem.market.sigma' must be > 0");
    if (m.r < 0.0) throw ConfigError("key 'problem.market.r' must be >= 0");
    c.market = m;
  } else if (c.command == Command::price) {
    throw ConfigError("missing required key 'problem.market'");
  }
}

inline void parse_solver(const json& obj, SolveOptions& o) {
  const std::string path = "solver";
  allow_keys(obj, path, {"n_sub", "picard_tol", "max_picard_iters", "on_divergence"});
  o.n_sub = get_count(obj, path, "n_sub", std::size_t{1});
  o.picard_tol = get_number(obj, path, "picard_tol", 1e-8);
  if (!(o.picard_tol > 0.0)) throw ConfigError("key 'solver.picard_tol' must be > 0");
  o.max_picard_iters = get_count(obj, path, "max_picard_iters", std::size_t{100});
  if (o.max_picard_iters == 0) throw ConfigError("key 'solver.max_picard_iters' must be >= 1");
  const std::string action = get_string(obj, path, "on_divergence", std::string("halve"));
  if (action == "halve") o.on_divergence = DivergenceAction::halve_intervals;
  else if (action == "fail") o.on_divergence = DivergenceAction::fail;
  else throw ConfigError("key 'solver.on_divergence' must be 'halve' or 'fail'");
}

}  // namespace detail

/// Validates a configuration against the schema for `command`.
inline RunConfig parse_config(Command command, json j,
                              std::optional<std::uint64_t> seed_override = std::nullopt) {
  using namespace detail;
  RunConfig c;
  c.command = command;
  allow_keys(j, "", {"command", "scenario", "problem", "solver", "output", "preset", "instance"});
  if (j.contains("command")) {
    const std::string cmd = get_string(j, "", "command");
    if (parse_command(cmd) != command)
      throw ConfigError("key 'command' is '" + cmd + "' but the invocation is '" + to_string(command) + "'");
  }
  if (!j.contains("scenario")) throw ConfigError("missing required key 'scenario'");
  if (seed_override) j["scenario"]["seed"] = *seed_override;
  parse_scenario(j.at("scenario"), c.scenario);

  if (j.contains("problem")) parse_problem(j.at("problem"), c);
  else if (command != Command::verify) throw ConfigError("missing required key 'problem'");
  else parse_problem(json::object(), c);

  if (j.contains("solver")) parse_solver(j.at("solver"), c.solver);
  if (j.contains("output")) {
    allow_keys(j.at("output"), "output", {"lbar"});
    const json& o = j.at("output");
    if (o.contains("lbar")) {
      if (!o.at("lbar").is_boolean()) throw ConfigError("key 'output.lbar' must be a boolean");
      c.want_lbar = o.at("lbar").get<bool>();
    }
  }
  if (j.contains("preset")) {
    if (command != Command::verify) throw ConfigError("key 'preset' is only valid for verify");
    c.preset = get_string(j, "", "preset");
    if (c.preset != "switch" && c.preset != "suite")
      throw ConfigError("key 'preset' must be 'switch' or 'suite'");
  }
  if (j.contains("instance")) {
    const json& r = j.at("instance");
    allow_keys(r, "instance", {"gamma", "u", "alpha"});
    c.instance.gamma = get_number(r, "instance", "gamma", 1.0);
    c.instance.u = get_number(r, "instance", "u", 0.0);
    c.instance.alpha = get_number(r, "instance", "alpha", 1.0);
  }
  j.erase("command");
  c.digest = fnv1a_hex(std::string(to_string(command)) + "\n" + j.dump());
  return c;
}

inline RunConfig parse_config_text(Command command, const std::string& text,
                                   std::optional<std::uint64_t> seed_override = std::nullopt) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  return parse_config(command, std::move(j), seed_override);
}

/// Everything a run produces; the caller decides where to write it.
struct RunResult {
  int exit_code = kOk;
  std::string message;     // one-line summary for stdout/stderr
  std::string solution_csv;
  std::string report_csv;
  std::string log;
};

namespace detail {

inline ScenarioSet make_scenarios(const ScenarioSpec& s) {
  return build_scenarios(TimeGrid(s.horizon, s.steps), s.mode, s.n_paths, s.seed, s.basis_degree);
}

inline Driver make_driver(const DriverSpec& d) {
  const Expression e = Expression::parse(d.expr);
  Driver f;
  f.eval = [e](double t, double b, double y, double z) { return e(ExprVars{t, b, y, z, 0.0}); };
  f.lipschitz = d.lipschitz;
  f.depends_on_y = e.uses(Expression::Var::y);
  f.depends_on_z = e.uses(Expression::Var::z);
  f.depends_on_b = e.uses(Expression::Var::b);
  return f;
}

inline LossFunction make_loss(const LossSpec& l) {
  const Expression e = Expression::parse(l.expr);
  LossFunction out;
  out.eval = [e](double t, double b, double x) { return e(ExprVars{t, b, 0.0, 0.0, x}); };
  out.c_lower = l.c_lower;
  out.c_upper = l.c_upper;
  out.shape = l.shape;
  out.random = e.uses(Expression::Var::b);
  return out;
}

inline NonlinearExpectation make_expectation(const ExpectationSpec& e) {
  NonlinearExpectation out;
  switch (e.kind) {
    case ExpectationKind::classical: out = NonlinearExpectation::classical(); break;
    case ExpectationKind::gexp: out = NonlinearExpectation::g_expectation(make_driver(e.driver), e.kappa); break;
    case ExpectationKind::alpha_maxmin:
      out = NonlinearExpectation::alpha_maxmin(e.alpha, e.kappa, e.kernel_grid);
      break;
  }
  out.kappa = e.kappa;
  out.scale = e.scale;
  return out;
}

inline TerminalClaim make_payoff(const ScenarioSet& s, const std::string& text) {
  const Expression e = Expression::parse(text);
  const double horizon = s.grid().horizon();
  return s.from_brownian(s.steps(), [&](double b) { return e(ExprVars{horizon, b, 0.0, 0.0, 0.0}); });
}

inline std::string csv_preamble(const RunConfig& c) {
  std::ostringstream os;
  os << "# nerb " << to_string(c.command) << "\n";
  os << "# config_digest=" << c.digest << "\n";
  os << "# seed=" << c.scenario.seed << "\n";
  return os.str();
}

inline std::string solution_table(const RunConfig& c, const ScenarioSet& s, const ReflectedSolution& sol,
                                  const std::vector<double>* lbar_values) {
  std::ostringstream os;
  os << csv_preamble(c);
  os << "t,mean_y,k,constraint";
  if (lbar_values) os << ",lbar";
  os << "\n";
  for (std::size_t i = 0; i <= s.steps(); ++i) {
    os << format_number(s.grid().time(i)) << ',' << format_number(expect(s, sol.y[i])) << ','
       << format_number(sol.k[i]) << ',' << format_number(sol.constraint[i]);
    if (lbar_values) os << ',' << (i < lbar_values->size() ? format_number((*lbar_values)[i]) : std::string());
    os << "\n";
  }
  return os.str();
}

inline std::string solver_log(const ReflectedSolution& sol) {
  std::ostringstream os;
  const auto& d = sol.diagnostics;
  os << "subintervals: " << d.n_sub << " (retries " << d.retries << ")\n";
  for (std::size_t b = 0; b < d.iterations.size(); ++b) {
    os << "  block " << b << " (right to left): " << d.iterations[b] << " iterations, norms";
    for (double v : d.difference_norms[b]) os << ' ' << format_number(v);
    os << "\n";
  }
  os << "contraction factor: " << format_number(d.contraction_factor) << "\n";
  os << "skorokhod residual: " << format_number(sol.skorokhod) << "\n";
  return os.str();
}

inline std::vector<CheckRecord> solution_checks(const ReflectedSolution& sol) {
  double min_constraint = sol.constraint.empty() ? 0.0 : sol.constraint[0];
  for (double v : sol.constraint) min_constraint = std::min(min_constraint, v);
  std::size_t iters = 0;
  for (auto n : sol.diagnostics.iterations) iters += n;
  return {
      make_check("min_constraint", "constraint value is nonnegative at every grid time",
                 min_constraint >= -kFeasibilityTolerance, min_constraint, -kFeasibilityTolerance),
      make_check("skorokhod_residual", "reflector moves only where the constraint binds",
                 std::fabs(sol.skorokhod) <= 1e-4, sol.skorokhod, 1e-4),
      make_check("k_total", "total reflection K_T", true, sol.k.values.back(), 0.0),
      make_check("picard_iterations", "Picard iterations summed over subintervals", true,
                 static_cast<double>(iters), 0.0),
  };
}

inline RunResult run_solve(const RunConfig& c) {
  const ScenarioSet s = make_scenarios(c.scenario);
  const TerminalClaim xi = make_payoff(s, c.payoff);
  const Driver f = make_driver(c.driver);
  const LossFunction l = make_loss(c.loss);
  const NonlinearExpectation e = make_expectation(c.expectation);
  const ReflectedSolution sol = solve_reflected(s, xi, f, l, e, c.solver);

  std::optional<RepresentationData> rep;
  if (c.want_lbar) rep = representation_gap(s, sol, f, e, l);

  RunResult r;
  r.solution_csv = solution_table(c, s, sol, rep ? &rep->lbar : nullptr);
  auto checks = solution_checks(sol);
  if (rep)
    checks.push_back(make_check("representation_gap", "E[Y_t] equals the sup representation over grid times",
                                rep->max_abs_gap <= 5.0 * s.grid().dt(), rep->max_abs_gap,
                                5.0 * s.grid().dt()));
  std::ostringstream report;
  write_report_csv(report, checks);
  r.report_csv = report.str();
  r.log = "command: solve\nconfig_digest: " + c.digest + "\n" + solver_log(sol);
  r.message = "Y_0 = " + format_number(expect(s, sol.y[0])) + ", K_T = " + format_number(sol.k.values.back());
  return r;
}

inline RunResult run_gexp(const RunConfig& c) {
  const ScenarioSet s = make_scenarios(c.scenario);
  const TerminalClaim xi = make_payoff(s, c.payoff);
  const NonlinearExpectation e = make_expectation(c.expectation);
  e.validate(s.grid());
  const double value = eval_expectation(e, s, xi);

  // Time profile of the generating BSDE (gexp kind) or of the classical mean.
  std::vector<double> profile(s.steps() + 1);
  if (e.kind == ExpectationKind::gexp) {
    const BsdePair sol = solve_bsde(s, xi, e.g);
    for (std::size_t i = 0; i <= s.steps(); ++i) profile[i] = expect(s, sol.y[i]);
  } else {
    for (std::size_t i = 0; i <= s.steps(); ++i)
      profile[i] = i == 0 ? value : expect(s, cond_expect(s, xi, i));
  }

  RunResult r;
  std::ostringstream os;
  os << csv_preamble(c) << "t,mean_y,k\n";
  for (std::size_t i = 0; i <= s.steps(); ++i)
    os << format_number(s.grid().time(i)) << ',' << format_number(profile[i]) << ",0\n";
  r.solution_csv = os.str();
  std::vector<CheckRecord> checks{make_check("value", "nonlinear expectation of the payoff", true, value, 0.0)};
  if (e.kind == ExpectationKind::alpha_maxmin)
    checks.push_back(make_check("girsanov_grid_value", "constant-kernel Girsanov grid second opinion", true,
                                alpha_maxmin_girsanov(e, s, xi), 0.0));
  std::ostringstream report;
  write_report_csv(report, checks);
  r.report_csv = report.str();
  r.log = "command: gexp\nconfig_digest: " + c.digest + "\nvalue: " + format_number(value) + "\n";
  r.message = "E[payoff] = " + format_number(value);
  return r;
}

inline RunResult run_price(const RunConfig& c) {
  const ScenarioSet s = make_scenarios(c.scenario);
  const TerminalClaim xi = make_payoff(s, c.payoff);
  RiskMeasure rho = RiskMeasure::convex(c.risk->kernels, c.risk->penalties, c.risk->kappa);
  rho.scale = c.risk->scale;
  const Benchmark q = Benchmark::from_knots(s.grid(), c.benchmark);
  const SuperhedgeResult res = superhedge_price(*c.market, s, xi, rho, q, c.solver);

  RunResult r;
  r.solution_csv = solution_table(c, s, res.solution, nullptr);
  auto checks = solution_checks(res.solution);
  checks.insert(checks.begin(), make_check("price", "candidate superhedging price Y_0", true, res.price, 0.0));
  std::ostringstream report;
  write_report_csv(report, checks);
  r.report_csv = report.str();
  r.log = "command: price\nconfig_digest: " + c.digest + "\n" + solver_log(res.solution);
  r.message = "price = " + format_number(res.price);
  return r;
}

inline std::vector<CheckRecord> switch_checks(const RunConfig& c, const ScenarioSet& s,
                                                ReflectedSolution& sol_out) {
  SwitchInstance inst;
  inst.gamma = c.instance.gamma;
  inst.u = c.instance.u;
  inst.alpha = c.instance.alpha;
  inst.xi = make_payoff(s, c.payoff);
  inst.validate(s);
  const double dt = s.grid().dt();

  sol_out = solve_reflected(s, inst.xi, inst.driver(), inst.loss(), NonlinearExpectation::classical(), c.solver);
  const auto flow = inst.flow(s);
  double k_err = 0.0;
  for (std::size_t i = 0; i <= s.steps(); ++i) k_err = std::max(k_err, std::fabs(sol_out.k[i] - flow[i]));
  const RepresentationData rep =
      representation_gap(s, sol_out, inst.driver(), NonlinearExpectation::classical(), inst.loss());
  const NonminimalityReport nm = nonminimality_demo(inst, s);

  const double mean_tol = s.is_tree() ? 1e-6 : 3.0 * standard_error(s, nm.y_alpha[s.steps() / 2]) + 1e-6;
  return {
      make_check("reflector_flow", "K_t = gamma (t ^ t*) on the grid", k_err <= 2.0 * dt, k_err, 2.0 * dt),
      make_check("skorokhod_residual", "sum E[l(t_i, Y_i)] dK_i vanishes", std::fabs(sol_out.skorokhod) <= 0.02,
                 sol_out.skorokhod, 0.02),
      make_check("representation_gap", "E[Y_t] equals the sup representation over grid times",
                 rep.max_abs_gap <= 5.0 * dt, rep.max_abs_gap, 5.0 * dt),
      make_check("nonminimal_mean", "tilted solution has the same mean as the minimal one",
                 nm.max_mean_difference <= mean_tol, nm.max_mean_difference, mean_tol),
      make_check("nonminimal_witness", "tilted solution falls below the minimal one at some node",
                 inst.alpha == 0.0 ? !nm.has_witness : nm.has_witness, nm.min_node_difference, -1e-6,
                 "t=" + format_number(s.grid().time(nm.witness_index)) + " node=" + std::to_string(nm.witness_node)),
  };
}

inline std::vector<CheckRecord> suite_checks(const RunConfig& c, const ScenarioSet& s) {
  std::vector<CheckRecord> out;
  const double horizon = s.grid().horizon();
  // closed form of the g-expectation with driver -kappa(|y|+|z|) on a constant
  const double kappa = 0.5;
  const double g = g_kappa(s, s.constant(s.steps(), 2.0), -kappa);
  const double expected = 2.0 * std::exp(-kappa * horizon);
  out.push_back(make_check("gexp_constant", "G^{-kappa}[C] = C exp(-kappa T)", std::fabs(g - expected) <= 1e-3,
                           std::fabs(g - expected), 1e-3));
  const double cp = g_expectation(s, s.constant(s.steps(), 3.0), drivers::abs_z(kappa));
  out.push_back(make_check("constant_preserving", "driver kappa |z| preserves constants",
                           std::fabs(cp - 3.0) <= 1e-10, std::fabs(cp - 3.0), 1e-10));
  // Picard self-consistency on a nonlinear driver with a binding constraint.
  Driver f = drivers::linear(-0.2, 0.0);
  f.eval = [](double, double, double y, double z) { return -0.5 - 0.2 * y + 0.1 * std::fabs(z); };
  f.depends_on_z = true;
  const TerminalClaim xi = s.from_brownian(s.steps(), [](double b) { return b + 0.2; });
  const LossFunction l = LossFunction::linear(0.1);
  SolveOptions o = c.solver;
  o.picard_tol = 1e-8;
  o.n_sub = 1;
  const auto a = solve_reflected(s, xi, f, l, NonlinearExpectation::classical(), o);
  o.n_sub = 2;
  const auto b = solve_reflected(s, xi, f, l, NonlinearExpectation::classical(), o);
  double diff = 0.0;
  for (std::size_t i = 0; i <= s.steps(); ++i)
    for (std::size_t k = 0; k < a.y[i].size(); ++k) diff = std::max(diff, std::fabs(a.y[i][k] - b.y[i][k]));
  out.push_back(make_check("picard_subinterval_invariance", "solutions agree across subinterval counts",
                           diff <= 5.0 * o.picard_tol, diff, 5.0 * o.picard_tol));
  return out;
}

inline RunResult run_verify(const RunConfig& c) {
  const ScenarioSet s = make_scenarios(c.scenario);
  ReflectedSolution sol;
  auto checks = switch_checks(c, s, sol);
  if (c.preset == "suite") {
    auto more = suite_checks(c, s);
    checks.insert(checks.end(), more.begin(), more.end());
  }
  RunResult r;
  r.solution_csv = solution_table(c, s, sol, nullptr);
  std::ostringstream report;
  write_report_csv(report, checks);
  r.report_csv = report.str();
  r.log = "command: verify\nconfig_digest: " + c.digest + "\npreset: " + c.preset + "\n" +
          format_report_text(checks) + solver_log(sol);
  r.exit_code = all_passed(checks) ? kOk : kCheckFailed;
  r.message = all_passed(checks) ? "all checks passed" : "some checks failed";
  return r;
}

}  // namespace detail

/// Runs a parsed configuration, mapping solver errors to exit codes.
inline RunResult run(const RunConfig& c) {
  try {
    switch (c.command) {
      case Command::solve: return detail::run_solve(c);
      case Command::gexp: return detail::run_gexp(c);
      case Command::price: return detail::run_price(c);
      case Command::verify: return detail::run_verify(c);
    }
  } catch (const Infeasible& e) {
    return {kInfeasible, std::string("infeasible: ") + e.what(), {}, {}, std::string("error: ") + e.what() + "\n"};
  } catch (const Divergence& e) {
    return {kDivergence, std::string("divergence: ") + e.what(), {}, {}, std::string("error: ") + e.what() + "\n"};
  } catch (const NumericalFailure& e) {
    return {kNumerical, std::string("numerical failure: ") + e.what(), {}, {}, std::string("error: ") + e.what() + "\n"};
  } catch (const InvalidInput& e) {
    return {kConfigError, std::string("invalid input: ") + e.what(), {}, {}, std::string("error: ") + e.what() + "\n"};
  }
  return {kConfigError, "unknown command", {}, {}, {}};
}

/// Parses the file at `config_path`, runs it and writes solution.csv,
/// report.csv and run.log into `out_dir`.
inline RunResult run_files(Command command, const std::string& config_path, const std::string& out_dir,
                           std::optional<std::uint64_t> seed_override = std::nullopt) {
  RunResult r;
  std::ifstream in(config_path, std::ios::binary);
  if (!in) {
    r.exit_code = kConfigError;
    r.message = "cannot read configuration '" + config_path + "'";
    return r;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    r = run(parse_config_text(command, buf.str(), seed_override));
  } catch (const InvalidInput& e) {
    r.exit_code = kConfigError;
    r.message = std::string("configuration error: ") + e.what();
    r.log = r.message + "\n";
  }
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(out_dir + "/" + name, std::ios::binary);
    out << content;
  };
  if (!r.solution_csv.empty()) write("solution.csv", r.solution_csv);
  if (!r.report_csv.empty()) write("report.csv", r.report_csv);
  write("run.log", r.log.empty() ? r.message + "\n" : r.log);
  return r;
}

}  // namespace nerb::cli
