// nerb: batch driver for the reflected BSDE solvers.
//
//   nerb <solve|gexp|price|verify> --config run.json [--out dir] [--seed n]

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nerb/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Solvers for BSDEs reflected through a nonlinear-expectation constraint"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;

  for (const char* name : {"solve", "gexp", "price", "verify"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "directory for solution.csv, report.csv, run.log");
    sub->add_option("--seed", seed, "override scenario.seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : nerb::cli::kConfigError;
  }

  const auto command = nerb::cli::parse_command(app.get_subcommands().front()->get_name());
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    std::cerr << "cannot create output directory '" << out_dir << "': " << ec.message() << "\n";
    return nerb::cli::kConfigError;
  }

  const auto result = nerb::cli::run_files(*command, config, out_dir, seed);
  (result.exit_code == 0 ? std::cout : std::cerr) << result.message << "\n";
  return result.exit_code;
}
