// Command-line front end: `afcl run --config cfg.json [--out dir] [--seed N]`
// executes one experiment and writes summary.json plus CSVs; `afcl list`
// prints the available experiments. Exit code 0 only if every check passed.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "afcl/errors.hpp"
#include "afcl/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"numerical experiments for streaming least-squares learners"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  CLI::App* run = app.add_subcommand("run", "run one experiment from a JSON config");
  run->add_option("--config", config_path, "path to the config file")->required();
  CLI::Option* out_opt = run->add_option("--out", out_override, "output directory (overrides config)");
  CLI::Option* seed_opt = run->add_option("--seed", seed_override, "base seed (overrides config)");

  CLI::App* list = app.add_subcommand("list", "list the available experiments");

  CLI11_PARSE(app, argc, argv);

  if (list->parsed()) {
    for (const auto& info : afcl::experiment_registry())
      std::cout << info.name << ": " << info.description << "\n";
    return 0;
  }

  try {
    const nlohmann::json cfg = afcl::load_config(config_path);
    afcl::RunContext ctx;
    ctx.seed = seed_opt->count() > 0 ? seed_override : cfg.value("seed", std::uint64_t{12345});
    ctx.out_dir = out_opt->count() > 0 ? out_override : cfg.value("out", std::string{"."});
    const afcl::ExperimentResult result = afcl::run_experiment(cfg, ctx);
    for (const auto& check : result.checks)
      std::cout << (check.pass ? "pass" : "FAIL") << "  " << result.experiment << "/"
                << check.name << "  value=" << check.value << " bound=" << check.bound
                << " tol=" << check.tol << "\n";
    std::cout << (result.pass ? "PASS" : "FAIL") << "  " << result.experiment << "\n";
    return result.pass ? 0 : 1;
  } catch (const afcl::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
