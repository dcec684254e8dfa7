// Experiment runner: every analysis the library supports is one
// subcommand, one config, one output directory of plot-ready CSV plus a
// JSON summary that embeds the fully resolved config.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "isda/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"isda: implicit semantic data augmentation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (defaults apply when omitted)");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--override", overrides, "config override, e.g. isda.lambda0=0.75");
    cmd->add_option("--seed", seed, "run seed (overrides the config)")
        ->each([&](const std::string&) { seed_set = true; });
  };

  CLI::App* train = app.add_subcommand("train", "supervised training run");
  CLI::App* train_semi = app.add_subcommand("train-semi", "semi-supervised training run");
  CLI::App* verify = app.add_subcommand("verify-bound", "surrogate vs Monte-Carlo tightness");
  CLI::App* sweep_m = app.add_subcommand("sweep-m", "explicit augmentation vs the surrogate");
  CLI::App* sweep_lambda = app.add_subcommand("sweep-lambda", "lambda0 sensitivity grid");
  CLI::App* ablate = app.add_subcommand("ablate", "covariance-mode and schedule ablations");
  CLI::App* props = app.add_subcommand("test-props", "run the invariant suite");
  for (CLI::App* cmd : {train, train_semi, verify, sweep_m, sweep_lambda, ablate, props}) {
    add_common(cmd);
  }

  CLI::App* timing = app.add_subcommand("report-timing", "overhead of paired CE/ISDA runs");
  std::string baseline_dir, isda_dir;
  timing->add_option("--baseline", baseline_dir, "baseline (CE) run directory")->required();
  timing->add_option("--isda", isda_dir, "ISDA run directory")->required();
  timing->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  isda::runner::apply_thread_cap();
  try {
    if (timing->parsed()) {
      return isda::runner::run_report_timing(baseline_dir, isda_dir, out_dir);
    }
    const isda::runner::json config =
        isda::runner::load_config(config_path, overrides, seed_set, seed);
    if (train->parsed()) return isda::runner::run_train(config, out_dir);
    if (train_semi->parsed()) return isda::runner::run_train_semi(config, out_dir);
    if (verify->parsed()) return isda::runner::run_verify_bound(config, out_dir);
    if (sweep_m->parsed()) return isda::runner::run_sweep_m(config, out_dir);
    if (sweep_lambda->parsed()) return isda::runner::run_sweep_lambda(config, out_dir);
    if (ablate->parsed()) return isda::runner::run_ablate(config, out_dir);
    if (props->parsed()) return isda::runner::run_test_props(config, out_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
