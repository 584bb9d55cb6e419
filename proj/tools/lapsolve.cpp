#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "lap/experiment.hpp"

namespace {

int run(const lap::ExperimentConfig& config) {
  const auto result = lap::run_experiment(config);
  int failures = 0;
  for (const auto& t : result.trials) {
    if (!t.ok) {
      ++failures;
      std::cerr << "trial " << t.trial << " failed: " << t.error << '\n';
      continue;
    }
    std::printf("trial %d: iters %d  relerr_x %.3e (init %.3e)  relerr_w %.3e (init %.3e)  matvecs %ld  %.1fs  [%s]\n",
                t.trial, t.iterations, t.relerr_x, t.initial_relerr_x, t.relerr_w, t.initial_relerr_w, t.matvecs,
                t.time_s, lap::to_string(t.termination));
    if (!t.diagnostic.empty()) std::printf("  note: %s\n", t.diagnostic.c_str());
  }
  std::cout << lap::format_table({result.summary});
  return failures == 0 ? 0 : 1;
}

int table(const std::vector<std::string>& dirs) {
  std::vector<lap::SummaryRow> rows;
  for (const auto& d : dirs) {
    const auto part = lap::read_summary_csv(std::filesystem::path(d) / "summary.csv");
    rows.insert(rows.end(), part.begin(), part.end());
  }
  std::cout << lap::format_table(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint image and motion reconstruction experiments"};
  app.require_subcommand(1);

  lap::ExperimentConfig config;
  std::string problem = "sr2d", solver = "lap", reg = "grad", scale = "desk", out;
  int max_outer = -1;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment");
  run_cmd->add_option("--problem", problem, "sr2d | sr3d | mri")->capture_default_str();
  run_cmd->add_option("--solver", solver, "lap | varpro | bcd")->capture_default_str();
  run_cmd->add_option("--reg", reg, "grad | identity | hybrid")->capture_default_str();
  run_cmd->add_option("--alpha", config.alpha, "Regularization parameter")->capture_default_str();
  run_cmd->add_option("--noise", config.noise, "Noise level as a fraction")->capture_default_str();
  run_cmd->add_option("--trials", config.trials, "Number of trials")->capture_default_str();
  run_cmd->add_option("--seed", config.seed, "Base seed")->capture_default_str();
  run_cmd->add_option("--scale", scale, "desk | paper")->capture_default_str();
  run_cmd->add_option("--out", out, "Output directory");
  run_cmd->add_option("--max-outer", max_outer, "Override the outer iteration cap");
  run_cmd->add_flag("--start-at-truth", config.start_at_truth, "Start from the true image and motion");

  std::vector<std::string> dirs;
  auto* table_cmd = app.add_subcommand("table", "Merge summary.csv files into one table");
  table_cmd->add_option("--in", dirs, "Experiment output directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      config.problem = lap::parse_problem(problem);
      config.solver = lap::parse_method(solver);
      config.regularizer = lap::parse_regularizer(reg);
      config.scale = lap::parse_scale(scale);
      config.out_dir = out;
      if (max_outer >= 0) config.max_outer = max_outer;
      return run(config);
    }
    return table(dirs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
