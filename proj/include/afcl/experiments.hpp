#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace afcl {

/// One named numeric check. `pass` is authoritative; value/bound/tol document
/// the comparison (usually value <= bound + tol) for the summary file.
struct CheckResult {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct ExperimentResult {
  std::string experiment;
  bool pass = true;
  std::vector<CheckResult> checks;

  void add(CheckResult c) {
    pass = pass && c.pass;
    checks.push_back(std::move(c));
  }
};

struct RunContext {
  std::string out_dir = ".";
  std::uint64_t seed = 12345;
};

using ExperimentFn = ExperimentResult (*)(const nlohmann::json& cfg, const RunContext& ctx);

struct ExperimentInfo {
  const char* name;
  const char* description;
  ExperimentFn fn;
  std::vector<const char*> extra_keys;  // beyond version/experiment/seed/out
};

/// The twelve experiments in their stable listing order.
const std::vector<ExperimentInfo>& experiment_registry();

/// Parses and validates a JSON config file: requires version = 1 and a known
/// experiment name, rejects unknown keys (the error names the key).
nlohmann::json load_config(const std::string& path);

/// Dispatches a validated config. `ctx.seed` and `ctx.out_dir` already
/// reflect any CLI overrides. Creates the output directory if needed and
/// writes summary.json there in addition to the experiment's CSVs.
ExperimentResult run_experiment(const nlohmann::json& config, const RunContext& ctx);

/// Convenience for tests and the acceptance harness: run by name with an
/// otherwise-empty config.
ExperimentResult run_experiment_by_name(const std::string& name, const RunContext& ctx);

void write_summary_json(const ExperimentResult& result, const std::string& out_dir);

}  // namespace afcl
