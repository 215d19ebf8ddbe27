#include "hhshock/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace hhshock;
  CLI::App app{"hhshock: stability analysis and simulation of shock profiles in hyperbolic-hyperbolic systems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(
#ifdef HHSHOCK_VERSION
                                        HHSHOCK_VERSION
#else
                                        "unknown"
#endif
                                        ));

  cli::RunOptions opt;
  std::uint64_t seed = 0;
  const std::map<std::string, std::string> help = {
      {"check-state", "classify constant states against the dissipativity conditions"},
      {"solve-profile", "solve and certify a shock profile"},
      {"evans", "Evans function winding and small-frequency checks along a profile"},
      {"glancing", "glancing points of characteristic branches and their persistence"},
      {"simulate", "direct simulation of a perturbed profile with decay-rate fits"},
      {"jinxin-compare", "second-order solver vs relaxation solver under refinement"}};
  for (const auto& name : cli::task_names()) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", opt.config_path, "config file (JSON, comments allowed)")->required();
    sub->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    sub->add_option("--jobs", opt.jobs, "worker cap")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "seed for randomized sampling (overrides the config)");
  }
  CLI11_PARSE(app, argc, argv);
  auto* sub = app.get_subcommands().front();
  if (sub->count("--seed") > 0) opt.seed = seed;

  try {
    auto cfg = cli::read_config_file(opt.config_path);
    auto rr = cli::run_task(sub->get_name(), cfg, opt);
    if (rr.report.contains("error")) std::cerr << rr.report["error"].get<std::string>() << '\n';
    for (const auto& v : rr.report["verdicts"])
      std::cout << (v["verdict"] == "pass" ? "[pass] " : "[FAIL] ") << v["condition"].get<std::string>()
                << "  margin " << v["margin"].dump() << '\n';
    std::cout << "report: " << opt.out_dir << "/report.json (" << rr.report["status"].get<std::string>() << ")\n";
    return rr.exit_code;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
