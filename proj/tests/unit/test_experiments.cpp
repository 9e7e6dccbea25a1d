#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "afcl/errors.hpp"
#include "afcl/experiments.hpp"

using namespace afcl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("afcl_test_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string write_config(const TempDir& dir, const json& cfg, const std::string& name = "cfg.json") {
  const std::string p = (dir.path / name).string();
  std::ofstream out(p);
  out << cfg.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("registry lists the twelve experiments in stable order") {
  const auto& reg = experiment_registry();
  std::vector<std::string> names;
  for (const auto& e : reg) names.push_back(e.name);
  CHECK(names == std::vector<std::string>{
                     "lms-iid", "lms-recurring", "opt-stepsize", "apa-equivalence",
                     "rls-batch", "rls-averaging", "rls-icl-limit", "drls-expand",
                     "kf-rls", "rts-pbt", "gp-invariance", "ekf-consistency"});
  for (const auto& e : reg) {
    CHECK(e.fn != nullptr);
    CHECK(std::string(e.description).size() > 10);
  }
}

TEST_CASE("config validation") {
  TempDir dir("config");
  SUBCASE("missing version") {
    const auto p = write_config(dir, json{{"experiment", "opt-stepsize"}});
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("version"), config_error);
  }
  SUBCASE("wrong version") {
    const auto p =
        write_config(dir, json{{"version", 2}, {"experiment", "opt-stepsize"}});
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("version"), config_error);
  }
  SUBCASE("unknown experiment") {
    const auto p = write_config(dir, json{{"version", 1}, {"experiment", "nope"}});
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("unknown experiment"),
                         config_error);
  }
  SUBCASE("unknown key names the key") {
    const auto p = write_config(
        dir, json{{"version", 1}, {"experiment", "opt-stepsize"}, {"bogus", 3}});
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("bogus"), config_error);
  }
  SUBCASE("a key valid for one experiment is rejected for another") {
    const auto p = write_config(
        dir, json{{"version", 1}, {"experiment", "opt-stepsize"}, {"trials", 5}});
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("trials"), config_error);
  }
  SUBCASE("seed must be a nonnegative integer") {
    const auto p = write_config(
        dir, json{{"version", 1}, {"experiment", "opt-stepsize"}, {"seed", -4}});
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("seed"), config_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_config((dir.path / "no_such.json").string()), config_error);
  }
  SUBCASE("malformed json") {
    const std::string p = (dir.path / "broken.json").string();
    std::ofstream(p) << "{ not json";
    CHECK_THROWS_AS(load_config(p), config_error);
  }
  SUBCASE("a valid config comes back as parsed") {
    const auto p = write_config(
        dir, json{{"version", 1}, {"experiment", "rls-averaging"}, {"seed", 7}});
    const json cfg = load_config(p);
    CHECK(cfg["experiment"] == "rls-averaging");
    CHECK(cfg["seed"] == 7);
  }
}

TEST_CASE("run_experiment writes summary.json and the experiment's csv files") {
  TempDir dir("run");
  RunContext ctx;
  ctx.out_dir = (dir.path / "nested" / "out").string();  // created on demand
  ctx.seed = 99;
  const json cfg{{"version", 1}, {"experiment", "opt-stepsize"}};
  const ExperimentResult res = run_experiment(cfg, ctx);
  CHECK(res.pass);
  CHECK(res.experiment == "opt-stepsize");
  CHECK(!res.checks.empty());

  const json summary = json::parse(slurp(fs::path(ctx.out_dir) / "summary.json"));
  CHECK(summary["experiment"] == "opt-stepsize");
  CHECK(summary["pass"] == true);
  REQUIRE(summary["checks"].is_array());
  CHECK(summary["checks"].size() == res.checks.size());
  for (const auto& c : summary["checks"]) {
    CHECK(c.contains("name"));
    CHECK(c.contains("value"));
    CHECK(c.contains("bound"));
    CHECK(c.contains("tol"));
    CHECK(c.contains("pass"));
  }
  CHECK(fs::exists(fs::path(ctx.out_dir) / "trajectory.csv"));
}

TEST_CASE("runs are deterministic under a fixed seed") {
  TempDir a("det_a"), b("det_b"), c("det_c");
  RunContext ctx;
  ctx.seed = 2024;
  ctx.out_dir = a.str();
  run_experiment_by_name("rls-averaging", ctx);
  ctx.out_dir = b.str();
  run_experiment_by_name("rls-averaging", ctx);
  CHECK(slurp(a.path / "rls_averaging.csv") == slurp(b.path / "rls_averaging.csv"));
  CHECK(slurp(a.path / "summary.json") == slurp(b.path / "summary.json"));

  // a different seed must actually change the sampled streams
  ctx.seed = 2025;
  ctx.out_dir = c.str();
  run_experiment_by_name("apa-equivalence", ctx);
  RunContext ctx2;
  ctx2.seed = 2024;
  ctx2.out_dir = a.str();
  run_experiment_by_name("apa-equivalence", ctx2);
  CHECK(slurp(a.path / "equivalence.csv") != slurp(c.path / "equivalence.csv"));
}

TEST_CASE("run_experiment_by_name rejects unknown names") {
  RunContext ctx;
  CHECK_THROWS_AS(run_experiment_by_name("definitely-not-real", ctx), config_error);
}
