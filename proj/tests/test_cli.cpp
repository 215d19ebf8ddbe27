#include "hhshock/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

using namespace hhshock;

namespace {

std::string out_dir(const std::string& name) {
  auto p = std::filesystem::path(::testing::TempDir()) / ("hhshock_cli_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

cli::RunReport run(const std::string& task, const std::string& text, const std::string& name) {
  cli::RunOptions o;
  o.out_dir = out_dir(name);
  return cli::run_task(task, {name + ".jsonc", text}, o);
}

std::string file_in(const std::string& name, const std::string& file) {
  return (std::filesystem::path(::testing::TempDir()) / ("hhshock_cli_" + name) / file).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string config_error(const std::string& task, const std::string& text) {
  try {
    run(task, text, "bad");
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
    return e.what();
  }
  ADD_FAILURE() << "expected ConfigError";
  return "";
}

const char* kStable = R"({
  // rest state
  "model": {"id": "burgers_dw", "a": 1.0, "d": 2},
  "check-state": {"states": [[0.0]], "grid": {"directions": 16, "magnitudes": 24}}
})";

const char* kUnstable = R"({
  "model": {"id": "burgers_dw", "a": 1.0, "d": 2},
  "check-state": {"states": [[2.0]], "grid": {"directions": 16, "magnitudes": 24}}
})";

int exit_status(const std::string& cmd) {
  int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(CliCheckState, StableAndUnstableExitCodes) {
  auto ok = run("check-state", kStable, "stable");
  EXPECT_EQ(ok.exit_code, 0);
  EXPECT_EQ(ok.report["status"], "pass");
  for (const auto& v : ok.report["verdicts"]) {
    EXPECT_EQ(v["verdict"], "pass");
    EXPECT_FALSE(v["grid"].get<std::string>().empty());
    EXPECT_TRUE(v.contains("tolerance"));
  }
  auto bad = run("check-state", kUnstable, "unstable");
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_EQ(bad.report["status"], "fail");
  EXPECT_FALSE(bad.report["results"]["states"][0]["stable"].get<bool>());
}

TEST(CliConfig, ValidationDiagnostics) {
  std::string neg = config_error("check-state", R"({
  "model": {"id": "burgers_dw"},
  "check-state": {
    "states": [[0.0]],
    "tolerances": {"margin": -1e-8}
  }
})");
  EXPECT_NE(neg.find("check-state.tolerances.margin"), std::string::npos) << neg;
  EXPECT_NE(neg.find("bad.jsonc:5"), std::string::npos) << neg;

  std::string typo = config_error("check-state", R"({"model": {"id": "burgers_dw"}, "check-state": {"state": [[0]]}})");
  EXPECT_NE(typo.find("check-state.states is required"), std::string::npos) << typo;
  std::string unknown =
      config_error("check-state", R"({"model": {"id": "burgers_dw", "alpha": 2}, "check-state": {"states": [[0]]}})");
  EXPECT_NE(unknown.find("model.alpha unknown key"), std::string::npos) << unknown;

  std::string syntax = config_error("check-state", "{\n  \"model\": {\"id\": \"burgers_dw\"},\n  \"check-state\": {\n}");
  EXPECT_NE(syntax.find("line"), std::string::npos) << syntax;

  config_error("evans", R"({"task": "glancing", "model": {"id": "burgers_dw"}, "evans": {}})");
  config_error("evans", R"({"model": {"id": "burgers_dw", "d": 1}, "evans": {
    "profile": {"u_minus": [1], "u_plus": [-1]}, "contours": {"rho_min": 2.0, "rho_max": 1.0}}})");
  config_error("simulate", R"({"model": {"id": "burgers_dw"}, "simulate": {
    "background": {"type": "constant", "state": [0.1]}, "grid": {"nx": 65, "ny": 7}}})");
  config_error("check-state", R"({"version": 2, "model": {"id": "burgers_dw"}, "check-state": {"states": [[0]]}})");
}

TEST(CliConfig, GenericModelFromMatrices) {
  auto r = run("check-state", R"({
  "model": {
    "id": "jinxin_generic", "n": 1, "d": 2,
    "A": [[1.0]],
    "B": [[[[1.0]], [[0.0]]], [[[0.0]], [[1.0]]]],
    "flux": [{"quadratic": [[[1.0]]]}, {}]
  },
  "check-state": {"states": [[0.0], [2.0]], "grid": {"directions": 8, "magnitudes": 16}}
})",
               "generic");
  // same model as burgers_dw with a = 1: the rest state passes, u = 2 fails
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_TRUE(r.report["results"]["states"][0]["stable"].get<bool>());
  EXPECT_FALSE(r.report["results"]["states"][1]["stable"].get<bool>());
}

TEST(CliReports, DeterministicReportAndSeparateManifest) {
  run("check-state", kStable, "det_a");
  run("check-state", kStable, "det_b");
  std::string ra = slurp(file_in("det_a", "report.json")), rb = slurp(file_in("det_b", "report.json"));
  EXPECT_FALSE(ra.empty());
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(ra.find("wall_time"), std::string::npos);
  json m = json::parse(slurp(file_in("det_a", "manifest.json")));
  EXPECT_TRUE(m.contains("wall_time_s"));
  EXPECT_TRUE(m.contains("started"));
  EXPECT_EQ(m["outputs"][0], "report.json");
}

TEST(CliTasks, SolveProfileWritesReadableProfile) {
  auto r = run("solve-profile", R"({
  "model": {"id": "burgers_dw", "a": 0.5, "d": 1},
  "solve-profile": {"profile": {"u_minus": [1.0], "u_plus": [-1.0], "L": 20, "h": 0.02}, "directions": 2}
})",
               "profile");
  EXPECT_EQ(r.exit_code, 0) << r.report.dump(2);
  auto p = read_profile(file_in("profile", "profile.dat"));
  double err = 0;
  for (std::size_t i = 0; i < p.size(); i += 10) err = std::max(err, std::abs(p.u[i](0) + std::tanh(p.x[i] / 2)));
  EXPECT_LT(err, 1e-6);
}

TEST(CliTasks, ExecutionErrorIsReported) {
  // u- < u+ is not a Lax shock for Burgers
  auto r = run("solve-profile", R"({
  "model": {"id": "burgers_dw", "a": 0.5, "d": 1},
  "solve-profile": {"profile": {"u_minus": [-1.0], "u_plus": [1.0]}}
})",
               "nolax");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.report["status"], "error");
  EXPECT_TRUE(r.report.contains("error"));
}

TEST(CliTasks, GlancingSetsForBothModels) {
  auto m1 = run("glancing", R"({
  "model": {"id": "burgers_dw", "a": 0.5, "d": 2},
  "glancing": {"state": [0.7], "etas": [[0.5], [1.5]]}
})",
                "glancing_m1");
  EXPECT_EQ(m1.exit_code, 0);
  EXPECT_TRUE(m1.report["verdicts"].empty());
  for (const auto& e : m1.report["results"]["etas"]) EXPECT_TRUE(e["branches"][0]["points"].empty());

  auto m2 = run("glancing", R"({
  "model": {"id": "acoustics_dw"},
  "glancing": {"state": [0, 0, 0], "etas": [[1.0]], "S5": {"samples": 8}}
})",
                "glancing_m2");
  EXPECT_EQ(m2.exit_code, 0);
  EXPECT_EQ(m2.report["verdicts"].size(), 2u);
  EXPECT_EQ(m2.report["results"]["flat_branches"], json::array({1}));
  EXPECT_TRUE(std::filesystem::exists(file_in("glancing_m2", "glancing_surface_branch0.csv")));
  EXPECT_TRUE(std::filesystem::exists(file_in("glancing_m2", "glancing_surface_branch2.csv")));
}

TEST(CliTasks, SeededPerturbationIsReproducible) {
  const char* cfg = R"({
  "seed": 11,
  "model": {"id": "burgers_dw", "a": 0.2, "d": 2},
  "simulate": {
    "background": {"type": "constant", "state": [0.3]},
    "grid": {"nx": 65, "ny": 8, "Lx": 20, "Ly": 10},
    "perturbation": {"type": "random_modes", "amplitude": 0.01, "width": [1.5, 1.5], "modes": 3},
    "options": {"T": 0.5, "samples": 3},
    "snapshot": true
  }
})";
  auto a = run("simulate", cfg, "seed_a");
  auto b = run("simulate", cfg, "seed_b");
  EXPECT_EQ(a.report.dump(), b.report.dump());
  EXPECT_EQ(a.report["seed"], 11);
  cli::RunOptions o;
  o.out_dir = out_dir("seed_c");
  o.seed = 12;
  auto c = cli::run_task("simulate", {"c.jsonc", cfg}, o);
  EXPECT_NE(a.report["results"]["perturbation"]["phases"], c.report["results"]["perturbation"]["phases"]);
  auto snap = read_snapshot(o.out_dir + "/final_u.bin");
  EXPECT_EQ(snap.nx, 65);
  EXPECT_EQ(snap.names, std::vector<std::string>{"u1"});
}

TEST(CliBinary, ExitCodes) {
  const std::string exe = HHSHOCK_CLI_PATH;
  auto dir = std::filesystem::path(::testing::TempDir()) / "hhshock_cli_binary";
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream((dir / name).string()) << text;
    return (dir / name).string();
  };
  std::string ok = write("ok.jsonc", kStable), bad = write("bad.jsonc", kUnstable);
  std::string neg = write("neg.jsonc", R"({"model": {"id": "burgers_dw"}, "check-state": {"states": [[0]], "tolerances": {"margin": -1}}})");
  std::string out = " --out " + (dir / "out").string();
  EXPECT_EQ(exit_status(exe + " check-state --config " + ok + out), 0);
  EXPECT_EQ(exit_status(exe + " check-state --config " + bad + out), 2);
  EXPECT_EQ(exit_status(exe + " check-state --config " + neg + out), 1);
  EXPECT_EQ(exit_status(exe + " check-state --config " + (dir / "missing.jsonc").string() + out), 1);
  EXPECT_EQ(exit_status(exe + " check-state --config " + ok + " --jobs 2" + out), 0);
  EXPECT_NE(exit_status(exe + " no-such-task --config " + ok), 0);
}
