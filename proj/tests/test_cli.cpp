#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "nerb/cli.hpp"

using namespace nerb;
using namespace nerb::cli;
namespace fs = std::filesystem;

namespace {

const std::string kSolve = R"json({
  "scenario": {"T": 1.0, "m": 60, "mode": "tree"},
  "problem": {
    "payoff": "b + 0.2",
    "driver": {"expr": "-0.5 - 0.2 * y + 0.1 * abs(z)", "lipschitz": 0.2},
    "loss": {"expr": "x - 0.1", "c_lower": 1, "c_upper": 1, "shape": "linear"},
    "expectation": {"kind": "classical"}
  }
})json";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("nerb_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name, std::ios::binary) << text;
    return dir / name;
  }
};

// Runs the installed binary and returns its exit status.
int invoke(const std::string& args, const fs::path& out) {
  fs::create_directories(out);
  const std::string cmd = std::string(NERB_CLI_PATH) + " " + args + " --out " + out.string() + " > " +
                          (out / "stdout.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string with(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  return text.replace(pos, from.size(), to);
}

std::size_t data_rows(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++n;
  return n - 1;  // header
}

}  // namespace

TEST_CASE("sample configurations run cleanly") {
  Scratch s("samples");
  const fs::path configs = NERB_CONFIG_DIR;
  CHECK(invoke("solve --config " + (configs / "solve_linear.json").string(), s.dir / "solve") == kOk);
  CHECK(invoke("gexp --config " + (configs / "gexp_constant.json").string(), s.dir / "gexp") == kOk);
  CHECK(invoke("price --config " + (configs / "price_risk.json").string(), s.dir / "price") == kOk);
  CHECK(invoke("verify --config " + (configs / "verify_suite.json").string(), s.dir / "verify") == kOk);
  for (const char* sub : {"solve", "gexp", "price", "verify"}) {
    CHECK(fs::exists(s.dir / sub / "solution.csv"));
    CHECK(fs::exists(s.dir / sub / "report.csv"));
    CHECK(fs::exists(s.dir / sub / "run.log"));
  }
  // lower g-expectation of the constant 2 over T = 1 with kappa = 0.5
  const std::string out = slurp(s.dir / "gexp" / "stdout.txt");
  const auto pos = out.find("= ");
  REQUIRE(pos != std::string::npos);
  CHECK(std::fabs(std::stod(out.substr(pos + 2)) - 2.0 * std::exp(-0.5)) <= 1e-3);
  CHECK(slurp(s.dir / "solve" / "solution.csv").find("t,mean_y,k,constraint,lbar") != std::string::npos);
}

TEST_CASE("exit codes") {
  Scratch s("exit");
  auto code = [&](const std::string& cmd, const std::string& text, const std::string& tag) {
    return invoke(cmd + " --config " + s.write(tag + ".json", text).string(), s.dir / tag);
  };
  CHECK(code("solve", kSolve, "ok") == kOk);
  CHECK(code("solve", with(kSolve, "\"m\": 60", "\"m\": 60, \"steps\": 3"), "unknown") == kConfigError);
  CHECK(slurp(s.dir / "unknown" / "stdout.txt").find("unknown key 'scenario.steps'") != std::string::npos);
  CHECK(code("solve", "{ not json", "badjson") == kConfigError);
  CHECK(code("solve", with(kSolve, "\"payoff\": \"b + 0.2\"", "\"payoff\": \"b +\""), "badexpr") == kConfigError);
  CHECK(code("solve", with(kSolve, "\"lipschitz\": 0.2", "\"lipschitz\": -1"), "badlip") == kConfigError);
  CHECK(code("solve",
             with(kSolve, "\"loss\": {\"expr\": \"x - 0.1\", \"c_lower\": 1, \"c_upper\": 1, \"shape\": \"linear\"},", ""),
             "noloss") == kConfigError);
  CHECK(slurp(s.dir / "noloss" / "stdout.txt").find("missing required key 'problem.loss'") != std::string::npos);
  CHECK(invoke("solve --config " + (s.dir / "missing.json").string(), s.dir / "missing") == kConfigError);
  CHECK(invoke("solve", s.dir / "noflag") == kConfigError);

  const std::string price = R"json({
    "scenario": {"T": 1.0, "m": 40, "mode": "tree"},
    "problem": {"payoff": "b", "risk": {"kernels": [0], "kappa": 0},
                "benchmark": [[0, 0.1]], "market": {"r": 0.05, "mu": 0.1}}})json";
  CHECK(code("price", price, "nosigma") == kConfigError);
  CHECK(code("price", with(price, "\"mu\": 0.1", "\"mu\": 0.1, \"sigma\": 0.2"), "priced") == kOk);

  CHECK(code("solve", with(kSolve, "x - 0.1", "x - 3"), "infeasible") == kInfeasible);
  const std::string strict = kSolve.substr(0, kSolve.rfind('}')) +
                             ", \"solver\": {\"max_picard_iters\": 1, \"on_divergence\": \"fail\"}}";
  CHECK(code("solve", strict, "diverge") == kDivergence);
  CHECK(code("solve",
             with(with(kSolve, "-0.5 - 0.2 * y + 0.1 * abs(z)", "-50 * y"), "\"m\": 60", "\"m\": 4"),
             "numerical") == kNumerical);

  // a negligible tilt cannot produce a witness below the minimal solution
  const std::string verify = R"json({"scenario": {"T": 1.0, "m": 100, "mode": "tree"},
    "instance": {"gamma": 1.0, "u": 0.0, "alpha": 1e-9}})json";
  CHECK(code("verify", verify, "checkfail") == kCheckFailed);
  CHECK(slurp(s.dir / "checkfail" / "report.csv").find("nonminimal_witness") != std::string::npos);
}

TEST_CASE("runs are byte-identical and the preamble records the inputs") {
  Scratch s("repro");
  const std::string mc = R"json({
    "scenario": {"T": 1.0, "m": 20, "mode": "montecarlo", "n_paths": 2000, "seed": 11, "basis_degree": 2},
    "problem": {
      "payoff": "max(b, 0) - 0.1",
      "driver": {"expr": "-0.1 * y", "lipschitz": 0.1},
      "loss": {"expr": "x", "c_lower": 1, "c_upper": 1, "shape": "linear"},
      "expectation": {"kind": "classical"}}})json";
  const auto path = s.write("mc.json", mc).string();
  REQUIRE(invoke("solve --config " + path, s.dir / "a") == kOk);
  REQUIRE(invoke("solve --config " + path, s.dir / "b") == kOk);
  REQUIRE(invoke("solve --config " + path + " --seed 12", s.dir / "c") == kOk);
  const std::string a = slurp(s.dir / "a" / "solution.csv");
  CHECK(a == slurp(s.dir / "b" / "solution.csv"));
  CHECK(slurp(s.dir / "a" / "report.csv") == slurp(s.dir / "b" / "report.csv"));
  const std::string c = slurp(s.dir / "c" / "solution.csv");
  CHECK(a != c);
  CHECK(a.rfind("# nerb solve\n# config_digest=", 0) == 0);
  CHECK(a.find("# seed=11\n") != std::string::npos);
  CHECK(c.find("# seed=12\n") != std::string::npos);
  CHECK(data_rows(a) == 21);

  const auto digest = parse_config_text(Command::solve, mc).digest;
  CHECK(digest.size() == 16);
  CHECK(a.find("# config_digest=" + digest + "\n") != std::string::npos);
  CHECK(parse_config_text(Command::solve, mc, 12).digest != digest);
  CHECK(parse_config_text(Command::solve, mc, 11).digest == digest);
  // the digest ignores layout but not content
  CHECK(parse_config_text(Command::solve, with(mc, "\"seed\": 11", "\"seed\":11")).digest == digest);
  CHECK(parse_config_text(Command::gexp, mc).digest != digest);
}

TEST_CASE("solution table shape") {
  auto c = parse_config_text(Command::solve, kSolve);
  auto r = run(c);
  REQUIRE(r.exit_code == kOk);
  CHECK(data_rows(r.solution_csv) == 61);
  std::istringstream in(r.solution_csv);
  std::string line;
  double previous_k = -1.0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line[0] == 't') continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::getline(row, cell, ',');
    std::getline(row, cell, ',');
    const double k = std::stod(cell);
    CHECK(k >= previous_k);
    previous_k = k;
  }
  CHECK(previous_k > 0.0);
  CHECK(r.report_csv.find("skorokhod_residual") != std::string::npos);
  CHECK(r.log.find("subintervals: 1") != std::string::npos);
}

TEST_CASE("schema validation") {
  CHECK_THROWS_AS(parse_config_text(Command::solve, with(kSolve, "\"scenario\"", "\"scenery\"")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(Command::solve, with(kSolve, "\"mode\": \"tree\"", "\"mode\": \"lattice\"")),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_text(Command::solve, "{\"command\": \"gexp\", " + kSolve.substr(1)), ConfigError);
  CHECK_NOTHROW(parse_config_text(Command::solve, "{\"command\": \"solve\", " + kSolve.substr(1)));
  CHECK_THROWS_AS(parse_config_text(Command::solve, "{\"preset\": \"suite\", " + kSolve.substr(1)), ConfigError);
  const auto v = parse_config_text(Command::verify, R"json({"scenario": {"T": 1, "m": 50, "mode": "tree"}})json");
  CHECK(v.preset == "switch");
  CHECK(v.payoff == "b + 0.5");
  CHECK(parse_command("price") == Command::price);
  CHECK_FALSE(parse_command("hedge").has_value());
}
