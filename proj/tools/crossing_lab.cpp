// crossing-lab: run experiments from config files and summarize artifacts.
//
//   crossing-lab run <config> [--out DIR] [--workers N]
//   crossing-lab report <DIR>
//
// Exit codes: 0 all checks ok, 2 some check failed (artifacts written),
// 1 invalid input or runtime error (nothing written).

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "crossing/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Crossing times of random walks in random potential"};
  app.require_subcommand(1);

  std::string config_path, out_dir, report_dir;
  unsigned workers = 0;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "Config file (schema = 1)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Artifact directory (overrides the config's `out`)");
  run->add_option("--workers", workers, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Print a markdown report for an artifact directory");
  report->add_option("dir", report_dir, "Artifact directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = crossing::load_config(config_path);
      const unsigned w = workers > 0 ? workers : cfg.workers;
      std::string dir = !out_dir.empty() ? out_dir : cfg.out_dir;
      if (dir.empty()) dir = "crossing-out";
      const int code = crossing::run_experiment(cfg, dir, w);
      std::cout << crossing::emit_report(dir);
      return code;
    }
    std::cout << crossing::emit_report(report_dir);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "crossing-lab: error: " << e.what() << "\n";
    return 1;
  }
}
