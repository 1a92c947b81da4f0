// dualadam_lab run <subcommand> --config <path> [--seeds a..b] [--out <dir>] [--jobs n] [--check]

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dualadam/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"DualAdam / InvAdam optimization laboratory"};
  app.require_subcommand(1);
  CLI::App* run = app.add_subcommand("run", "run an experiment and write a run directory");

  std::string subcommand, config_path, seeds, out;
  unsigned jobs = 1;
  bool check = false;
  run->add_option("subcommand", subcommand, "trajectory | train | hessian | escape | sweep")->required();
  run->add_option("--config", config_path, "JSON config file");
  run->add_option("--seeds", seeds, "seed range a..b (inclusive) or a single seed");
  run->add_option("--out", out, "output root; with --check, the run directory to validate");
  run->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--check", check, "validate an existing run directory instead of running");

  CLI11_PARSE(app, argc, argv);

  try {
    if (check) {
      if (out.empty()) throw dualadam::Error("--check needs --out <run directory>");
      const auto problems = dualadam::check_run_dir(out);
      for (const auto& p : problems) std::cerr << "check: " << p << '\n';
      if (problems.empty()) std::cout << "ok " << out << '\n';
      return problems.empty() ? 0 : 1;
    }
    const dualadam::Config config =
        config_path.empty() ? dualadam::Config{} : dualadam::Config::load(config_path);
    const auto seed_list = seeds.empty() ? std::vector<std::uint64_t>{} : dualadam::parse_seed_range(seeds);
    const auto root = out.empty() ? dualadam::default_output_root() : std::filesystem::path(out);
    const auto result = dualadam::run_subcommand(subcommand, config, seed_list, root, jobs);
    std::cout << result.dir.string() << '\n';
    if (result.exit_code != 0)
      std::cerr << "warning: " << result.result.diverged_runs << " run(s) diverged\n";
    return result.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
