#pragma once

// Experiment runner behind the CLI: schema-checked JSON config, dotted-path
// overrides, subcommand implementations, and the CSV/JSON artifacts.

#include <string>
#include <vector>

#include <json.hpp>

namespace isda::runner {

using json = nlohmann::json;

// Fully resolved default configuration; every run embeds its resolved
// config in summary.json so it can be replayed bit-exactly.
json default_config();

// Parses, applies "a.b.c=value" overrides, fills defaults and rejects
// unknown keys (fail-closed).
json load_config(const std::string& path, const std::vector<std::string>& overrides,
                 bool has_seed_override = false, uint64_t seed_override = 0);

json resolve_config(json user, const std::vector<std::string>& overrides,
                    bool has_seed_override = false, uint64_t seed_override = 0);

// Subcommands; each returns a process exit code and writes its artifacts
// under out_dir.
int run_train(const json& config, const std::string& out_dir);
int run_train_semi(const json& config, const std::string& out_dir);
int run_verify_bound(const json& config, const std::string& out_dir);
int run_sweep_m(const json& config, const std::string& out_dir);
int run_sweep_lambda(const json& config, const std::string& out_dir);
int run_ablate(const json& config, const std::string& out_dir);
int run_test_props(const json& config, const std::string& out_dir);
int run_report_timing(const std::string& baseline_dir, const std::string& isda_dir,
                      const std::string& out_dir);

// Applies the ISDA_THREADS cap (worker threads for data-parallel loops).
void apply_thread_cap();

}  // namespace isda::runner
