#include "softorder/experiment.hpp"

#include <CLI11.hpp>

#include <optional>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"multitask layer-ordering toolkit"};
  app.require_subcommand(1);

  // run
  std::string config_path;
  std::optional<std::string> run_out;
  std::optional<uint64_t> run_seed;
  std::optional<int> run_workers;
  auto* run = app.add_subcommand("run", "train an experiment from a JSON config");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", run_out, "override the config's output directory");
  run->add_option("--seed", run_seed, "override the config's base seed");
  run->add_option("--workers", run_workers, "override the worker count");

  // analyze
  std::string analyze_dir;
  std::optional<std::string> analyze_out;
  auto* analyze = app.add_subcommand("analyze", "derive usage/hardness/divergence from a run");
  analyze->add_option("run_dir", analyze_dir, "directory written by `run`")->required();
  analyze->add_option("--out", analyze_out, "output directory (defaults to the run directory)");

  // sweep
  std::string sweep_dir;
  int sweep_task = 0, sweep_layer = 0, sweep_depth = 0, sweep_steps = 9;
  std::optional<std::string> sweep_out;
  auto* sweep = app.add_subcommand("sweep", "gate-value sweep images from a pixel run checkpoint");
  sweep->add_option("run_dir", sweep_dir, "pixel experiment run directory")->required();
  sweep->add_option("--task", sweep_task, "task index")->required();
  sweep->add_option("--layer", sweep_layer, "shared layer index")->required();
  sweep->add_option("--depth", sweep_depth, "depth position, 1-based (0 = all depths)");
  sweep->add_option("--steps", sweep_steps, "grid points in [0,1]; 1 keeps the trained value");
  sweep->add_option("--out", sweep_out, "output directory (defaults to the run directory)");

  // tracecheck
  long tc_tasks = 3, tc_m = 4;
  uint64_t tc_seed = 1;
  bool tc_scalars = false, tc_json = false;
  auto* tracecheck = app.add_subcommand("tracecheck", "verify the equal-trace identity of cyclic matrix products");
  tracecheck->add_option("--tasks", tc_tasks, "number of matrices in the cycle");
  tracecheck->add_option("--size", tc_m, "matrix dimension");
  tracecheck->add_option("--seed", tc_seed, "generator seed");
  tracecheck->add_flag("--scalars", tc_scalars, "also compute the per-task scalar chain");
  tracecheck->add_flag("--json", tc_json, "emit JSON instead of text");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return softorder::cmd_run(config_path, run_out, run_seed, run_workers);
  if (analyze->parsed()) return softorder::cmd_analyze(analyze_dir, analyze_out);
  if (sweep->parsed())
    return softorder::cmd_sweep(sweep_dir, sweep_task, sweep_layer, sweep_depth, sweep_steps,
                                sweep_out);
  if (tracecheck->parsed())
    return softorder::cmd_tracecheck(tc_tasks, tc_m, tc_seed, tc_scalars, tc_json);
  return 1;
}
