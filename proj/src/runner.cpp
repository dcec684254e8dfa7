#include "isda/runner.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <unistd.h>

#include "isda/instances.hpp"
#include "isda/mc.hpp"
#include "isda/reference.hpp"
#include "isda/trainer.hpp"

namespace isda::runner {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config schema

json default_config() {
  return json{
      {"schema_version", 1},
      {"seed", 1},
      {"data",
       {{"kind", "synthetic"},
        {"synthetic",
         {{"num_classes", 10},
          {"dim", 16},
          {"train_per_class", 200},
          {"test_per_class", 200},
          {"mean_scale", 2.5},
          {"cov", {{"kind", "anisotropic"}, {"sigma", 0.45}, {"spike", 1.6}}}}},
        {"binary",
         {{"path", ""},
          {"test_path", ""},
          {"height", 32},
          {"width", 32},
          {"channels", 3},
          {"num_classes", 10}}}}},
      {"model", {{"hidden", json::array({64, 64})}, {"feature_dim", 16}, {"leaky_slope", 0.1}}},
      {"train",
       {{"epochs", 40},
        {"batch_size", 64},
        {"loss", "isda"},
        {"lr", 0.05},
        {"momentum", 0.9},
        {"weight_decay", 1e-4},
        {"milestones", json::array({30})},
        {"gamma", 0.1},
        {"eval_last_k", 10}}},
      {"isda",
       {{"lambda0", 0.5},
        {"schedule", "linear_ramp"},
        {"cov_mode", "full"},
        {"ramp_fraction", 1.0}}},
      {"semi",
       {{"num_labeled", 200}, {"eta1", 1.0}, {"eta2", 0.5}, {"pi_noise_std", 0.15}}},
      {"verify", {{"probe_draws", 1000}, {"probe_batch", 128}}},
      {"sweep",
       {{"lambda0_grid", json::array({0.1, 0.25, 0.5, 0.75, 1.0})},
        {"m_grid", json::array({1, 2, 5, 10, 100})},
        {"explicit_seeds", 50},
        {"mc_reference_draws", 200000}}},
  };
}

namespace {

void check_keys(const json& user, const json& schema, const std::string& path) {
  if (!user.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) {
      throw std::invalid_argument("config: unknown key '" + key_path + "'");
    }
    if (schema[it.key()].is_object()) check_keys(it.value(), schema[it.key()], key_path);
  }
}

void merge_defaults(json& user, const json& schema) {
  for (auto it = schema.begin(); it != schema.end(); ++it) {
    if (!user.contains(it.key())) {
      user[it.key()] = it.value();
    } else if (it.value().is_object() && user[it.key()].is_object()) {
      merge_defaults(user[it.key()], it.value());
    }
  }
}

void apply_override(json& config, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override must look like key.path=value: " + spec);
  }
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);

  json* node = &config;
  size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    const auto dotpos = path.find('.', start);
    parts.push_back(path.substr(start, dotpos == std::string::npos ? dotpos : dotpos - start));
    if (dotpos == std::string::npos) break;
    start = dotpos + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) {
      throw std::invalid_argument("override: unknown key '" + parts[i] + "' in " + spec);
    }
    node = &(*node)[parts[i]];
  }
  if (!node->contains(parts.back())) {
    throw std::invalid_argument("override: unknown key '" + parts.back() + "' in " + spec);
  }
  json value;
  try {
    value = json::parse(raw);
  } catch (...) {
    value = raw;  // plain string
  }
  (*node)[parts.back()] = value;
}

}  // namespace

json resolve_config(json user, const std::vector<std::string>& overrides, bool has_seed_override,
                    uint64_t seed_override) {
  const json schema = default_config();
  check_keys(user, schema, "");
  if (user.contains("schema_version") && user["schema_version"].get<int>() != 1) {
    throw std::invalid_argument("config: unsupported schema_version");
  }
  merge_defaults(user, schema);
  for (const auto& ov : overrides) apply_override(user, ov);
  if (has_seed_override) user["seed"] = seed_override;
  return user;
}

json load_config(const std::string& path, const std::vector<std::string>& overrides,
                 bool has_seed_override, uint64_t seed_override) {
  json user = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    in >> user;
  }
  return resolve_config(std::move(user), overrides, has_seed_override, seed_override);
}

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* cap = std::getenv("ISDA_THREADS")) {
    const int n = std::atoi(cap);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

// ---------------------------------------------------------------------------
// Artifact helpers

namespace {

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Append-only CSV writer: rows are flushed and fsync'd at epoch/sweep
// boundaries, so a crash leaves a valid prefix.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw std::runtime_error("cannot open csv: " + path);
    std::fputs(header.c_str(), f_);
    std::fputc('\n', f_);
  }
  ~CsvWriter() {
    if (f_) std::fclose(f_);
  }
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) std::fputc(',', f_);
      std::fputs(cells[i].c_str(), f_);
    }
    std::fputc('\n', f_);
  }

  void sync() {
    std::fflush(f_);
    ::fsync(fileno(f_));
  }

 private:
  FILE* f_ = nullptr;
};

void write_summary(const std::string& out_dir, const json& summary) {
  std::ofstream out(out_dir + "/summary.json");
  out << summary.dump(2) << "\n";
}

struct BuiltData {
  Dataset train;
  Dataset test;
  SyntheticData synthetic;  // ground truth when kind == synthetic
};

ClassCovSpec cov_spec_from_json(const json& j) {
  ClassCovSpec spec;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "isotropic") {
    spec.kind = ClassCovSpec::Kind::Isotropic;
    spec.sigma = j.at("sigma").get<double>();
  } else if (kind == "anisotropic") {
    spec.kind = ClassCovSpec::Kind::Anisotropic;
    spec.sigma = j.at("sigma").get<double>();
    spec.spike = j.at("spike").get<double>();
  } else {
    throw std::invalid_argument("config: unknown covariance spec kind '" + kind + "'");
  }
  return spec;
}

BuiltData build_data(const json& config) {
  BuiltData out;
  const json& data = config.at("data");
  const std::string kind = data.at("kind").get<std::string>();
  const uint64_t seed = config.at("seed").get<uint64_t>();
  if (kind == "synthetic") {
    const json& sj = data.at("synthetic");
    SyntheticSpec spec;
    spec.num_classes = sj.at("num_classes").get<int>();
    spec.dim = sj.at("dim").get<int>();
    spec.per_class = sj.at("train_per_class").get<int>();
    spec.mean_scale = sj.at("mean_scale").get<double>();
    spec.cov.push_back(cov_spec_from_json(sj.at("cov")));
    out.synthetic = generate_synthetic(spec, seed);
    out.train = out.synthetic.data;
    SyntheticSpec test_spec = spec;
    test_spec.per_class = sj.at("test_per_class").get<int>();
    out.test = generate_synthetic(test_spec, seed + 0x7E57).data;
  } else if (kind == "binary") {
    const json& bj = data.at("binary");
    ChannelStats stats;
    out.train = load_binary_records(bj.at("path").get<std::string>(), bj.at("height").get<int>(),
                                    bj.at("width").get<int>(), bj.at("channels").get<int>(),
                                    bj.at("num_classes").get<int>(), true, nullptr, &stats);
    const std::string test_path = bj.at("test_path").get<std::string>();
    if (!test_path.empty()) {
      out.test = load_binary_records(test_path, bj.at("height").get<int>(),
                                     bj.at("width").get<int>(), bj.at("channels").get<int>(),
                                     bj.at("num_classes").get<int>(), true, &stats, nullptr);
    } else {
      out.test = out.train;
    }
  } else {
    throw std::invalid_argument("config: unknown data kind '" + kind + "'");
  }
  return out;
}

TrainConfig train_config_from_json(const json& config, int iters_per_epoch_hint) {
  TrainConfig tc;
  const json& tj = config.at("train");
  tc.epochs = tj.at("epochs").get<int>();
  tc.batch_size = tj.at("batch_size").get<int>();
  tc.seed = config.at("seed").get<uint64_t>();
  const std::string loss = tj.at("loss").get<std::string>();
  if (loss == "isda") {
    tc.loss = LossKind::Isda;
  } else if (loss == "ce") {
    tc.loss = LossKind::CrossEntropy;
  } else {
    throw std::invalid_argument("config: train.loss must be isda or ce");
  }
  tc.sgd.lr = tj.at("lr").get<double>();
  tc.sgd.momentum = tj.at("momentum").get<double>();
  tc.sgd.weight_decay = tj.at("weight_decay").get<double>();
  tc.sgd.milestones = tj.at("milestones").get<std::vector<int>>();
  tc.sgd.gamma = tj.at("gamma").get<double>();
  tc.eval_last_k = tj.at("eval_last_k").get<int>();

  const json& ij = config.at("isda");
  tc.lambda0 = ij.at("lambda0").get<double>();
  const std::string sched = ij.at("schedule").get<std::string>();
  if (sched == "linear_ramp") {
    tc.schedule = Schedule::LinearRamp;
  } else if (sched == "constant") {
    tc.schedule = Schedule::Constant;
  } else {
    throw std::invalid_argument("config: isda.schedule must be linear_ramp or constant");
  }
  tc.cov_mode = cov_mode_from_name(ij.at("cov_mode").get<std::string>());
  const double frac = ij.at("ramp_fraction").get<double>();
  if (frac <= 0.0 || frac > 1.0) {
    throw std::invalid_argument("config: isda.ramp_fraction must be in (0, 1]");
  }
  if (iters_per_epoch_hint > 0) {
    tc.ramp_iterations = std::max<int64_t>(
        1, static_cast<int64_t>(frac * tc.epochs * iters_per_epoch_hint));
  }

  const json& sj = config.at("semi");
  tc.semi.eta1 = sj.at("eta1").get<double>();
  tc.semi.eta2 = sj.at("eta2").get<double>();
  tc.pi_noise_std = sj.at("pi_noise_std").get<double>();

  const json& vj = config.at("verify");
  tc.probe_batch = vj.at("probe_batch").get<int>();
  return tc;
}

Mlp model_from_json(const json& config, int input_dim, Rng& rng) {
  const json& mj = config.at("model");
  std::vector<int> dims{input_dim};
  for (int h : mj.at("hidden").get<std::vector<int>>()) dims.push_back(h);
  dims.push_back(mj.at("feature_dim").get<int>());
  return make_mlp(dims, mj.at("leaky_slope").get<double>(), rng);
}

void write_metrics_csv(const std::string& out_dir, const TrainResult& result) {
  CsvWriter csv(out_dir + "/metrics.csv", "epoch,iteration,lambda,train_loss,test_error,wall_ms");
  for (const auto& r : result.history) {
    csv.row({std::to_string(r.epoch), std::to_string(r.iteration), fmt_g17(r.lambda),
             fmt_g17(r.train_loss), fmt_g17(r.test_error), fmt_g17(r.wall_ms)});
    csv.sync();
  }
}

json history_results(const TrainResult& result) {
  return json{{"final_error", result.final_error},
              {"final_train_loss", result.history.back().train_loss},
              {"epochs", result.history.size()},
              {"train_wall_ms", result.train_wall_ms}};
}

int64_t model_train_flops_per_sample(const Mlp& model, int num_classes) {
  // Forward multiplies plus roughly 2x for backward, model and head.
  int64_t fwd = 0;
  for (int l = 0; l < model.num_layers(); ++l) {
    fwd += static_cast<int64_t>(model.W[l].rows) * model.W[l].cols;
  }
  fwd += static_cast<int64_t>(num_classes) * model.feature_dim();
  return 3 * fwd;
}

}  // namespace

// ---------------------------------------------------------------------------
// Subcommands

int run_train(const json& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  BuiltData data = build_data(config);
  const int iters = (data.train.size() + config["train"]["batch_size"].get<int>() - 1) /
                    config["train"]["batch_size"].get<int>();
  TrainConfig tc = train_config_from_json(config, iters);

  Rng rng(tc.seed);
  Rng model_rng = rng.split(1);
  Rng head_rng = rng.split(2);
  Mlp model = model_from_json(config, data.train.dim(), model_rng);
  ClassifierHead head = make_head(data.train.num_classes, model.feature_dim(), head_rng);

  TrainResult result = train_supervised(data.train, data.test, model, head, tc);
  write_metrics_csv(out_dir, result);
  result.tracker.save(out_dir + "/tracker.isda");

  Checkpoint ckpt;
  ckpt.model = model;
  ckpt.head = head;
  ckpt.tracker = result.tracker;
  ckpt.epoch = tc.epochs;
  ckpt.iteration = result.history.back().iteration;
  ckpt.seed = tc.seed;
  save_checkpoint(out_dir + "/checkpoint.bin", ckpt);

  json summary{{"schema_version", 1},
               {"subcommand", "train"},
               {"config", config},
               {"results", history_results(result)}};
  summary["results"]["isda_extra_flops_per_sample"] =
      isda_extra_flops_per_sample(tc.cov_mode, model.feature_dim(), data.train.num_classes);
  summary["results"]["model_flops_per_sample"] =
      model_train_flops_per_sample(model, data.train.num_classes);
  write_summary(out_dir, summary);
  std::printf("train: final_error=%.6f (mean of last %d epochs)\n", result.final_error,
              std::min<int>(tc.eval_last_k, tc.epochs));
  return 0;
}

int run_train_semi(const json& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  BuiltData data = build_data(config);
  const int num_labeled = config["semi"]["num_labeled"].get<int>();
  SemiSplit split = split_semi(data.train, num_labeled, config["seed"].get<uint64_t>());

  const int iters = (split.labeled.size() + config["train"]["batch_size"].get<int>() - 1) /
                    config["train"]["batch_size"].get<int>();
  TrainConfig tc = train_config_from_json(config, iters);

  Rng rng(tc.seed);
  Rng model_rng = rng.split(1);
  Rng head_rng = rng.split(2);
  Mlp model = model_from_json(config, data.train.dim(), model_rng);
  ClassifierHead head = make_head(data.train.num_classes, model.feature_dim(), head_rng);

  TrainResult result = train_semi(split.labeled, split.unlabeled, data.test, model, head, tc);
  write_metrics_csv(out_dir, result);
  result.tracker.save(out_dir + "/tracker.isda");

  json summary{{"schema_version", 1},
               {"subcommand", "train-semi"},
               {"config", config},
               {"results", history_results(result)}};
  summary["results"]["num_labeled_train"] = split.labeled.size();
  summary["results"]["num_validation"] = split.validation.size();
  summary["results"]["num_unlabeled"] = split.unlabeled.size();
  write_summary(out_dir, summary);
  std::printf("train-semi: final_error=%.6f labeled=%d unlabeled=%d\n", result.final_error,
              split.labeled.size(), split.unlabeled.size());
  return 0;
}

int run_verify_bound(const json& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  BuiltData data = build_data(config);
  const int iters = (data.train.size() + config["train"]["batch_size"].get<int>() - 1) /
                    config["train"]["batch_size"].get<int>();
  TrainConfig tc = train_config_from_json(config, iters);
  tc.loss = LossKind::Isda;
  tc.probe_draws = config["verify"]["probe_draws"].get<int>();

  Rng rng(tc.seed);
  Rng model_rng = rng.split(1);
  Rng head_rng = rng.split(2);
  Mlp model = model_from_json(config, data.train.dim(), model_rng);
  ClassifierHead head = make_head(data.train.num_classes, model.feature_dim(), head_rng);

  TrainResult result = train_supervised(data.train, data.test, model, head, tc);
  write_metrics_csv(out_dir, result);

  CsvWriter csv(out_dir + "/bound.csv", "iteration,surrogate,mc_estimate,mc_stderr");
  bool all_dominated = true;
  double max_rel_gap = 0.0;
  for (const auto& p : result.probes) {
    csv.row({std::to_string(p.iteration), fmt_g17(p.surrogate), fmt_g17(p.mc_estimate),
             fmt_g17(p.mc_stderr)});
    csv.sync();
    if (p.surrogate < p.mc_estimate - 3.0 * p.mc_stderr) all_dominated = false;
    if (p.surrogate > 0.0) {
      max_rel_gap = std::max(max_rel_gap, (p.surrogate - p.mc_estimate) / p.surrogate);
    }
  }

  json summary{{"schema_version", 1},
               {"subcommand", "verify-bound"},
               {"config", config},
               {"results", history_results(result)}};
  summary["results"]["probe_rows"] = result.probes.size();
  summary["results"]["all_dominated"] = all_dominated;
  summary["results"]["max_relative_gap"] = max_rel_gap;
  write_summary(out_dir, summary);
  std::printf("verify-bound: %zu rows, dominated=%s, max_rel_gap=%.4f\n", result.probes.size(),
              all_dominated ? "yes" : "NO", max_rel_gap);
  return all_dominated ? 0 : 1;
}

int run_sweep_m(const json& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  // Fixed instance: a randomized head/tracker/batch pair, reproducible
  // from the run seed.
  const uint64_t seed = config["seed"].get<uint64_t>();
  Rng rng(seed);
  RandomInstance inst = make_random_instance(4, 4, 8, 1.0, rng);
  const double lambda = config["isda"]["lambda0"].get<double>();
  const CovMode mode = cov_mode_from_name(config["isda"]["cov_mode"].get<std::string>());

  AugmentationConfig aug;
  aug.lambda0 = lambda;
  aug.schedule = Schedule::Constant;
  aug.cov_mode = mode;
  const LossReport sur = surrogate_loss(inst.batch, inst.head, inst.tracker, aug);

  const int mc_draws = config["sweep"]["mc_reference_draws"].get<int>();
  Rng mc_rng = Rng(seed).split(77);
  const McEstimate ref = mc_expected_ce(inst.batch, inst.head, inst.tracker, mode, lambda,
                                        mc_draws, mc_rng);

  const int R = config["sweep"]["explicit_seeds"].get<int>();
  CsvWriter csv(out_dir + "/sweep_m.csv",
                "M,mean_explicit,stderr_explicit,mc_reference,mc_reference_stderr,surrogate");
  json rows = json::array();
  for (int M : config["sweep"]["m_grid"].get<std::vector<int>>()) {
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < R; ++r) {
      Rng run_rng = Rng(seed).split(1000 + r);
      const double v =
          explicit_loss(inst.batch, inst.head, inst.tracker, mode, lambda, M, run_rng);
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / R;
    const double var = std::max(0.0, (sumsq - R * mean * mean) / (R - 1));
    const double stderr_mean = std::sqrt(var);  // spread of one explicit_loss realization
    csv.row({std::to_string(M), fmt_g17(mean), fmt_g17(stderr_mean), fmt_g17(ref.estimate),
             fmt_g17(ref.std_error), fmt_g17(sur.loss)});
    csv.sync();
    rows.push_back({{"M", M}, {"mean_explicit", mean}, {"stderr", stderr_mean}});
  }

  json summary{{"schema_version", 1},
               {"subcommand", "sweep-m"},
               {"config", config},
               {"results",
                {{"surrogate", sur.loss},
                 {"mc_reference", ref.estimate},
                 {"mc_reference_stderr", ref.std_error},
                 {"rows", rows}}}};
  write_summary(out_dir, summary);
  std::printf("sweep-m: surrogate=%.6f mc_reference=%.6f (+/- %.2g)\n", sur.loss, ref.estimate,
              ref.std_error);
  return 0;
}

int run_sweep_lambda(const json& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  CsvWriter csv(out_dir + "/sweep_lambda.csv", "lambda0,final_error,final_train_loss");
  json rows = json::array();
  for (double lambda0 : config["sweep"]["lambda0_grid"].get<std::vector<double>>()) {
    json run_cfg = config;
    run_cfg["isda"]["lambda0"] = lambda0;
    BuiltData data = build_data(run_cfg);
    const int iters = (data.train.size() + run_cfg["train"]["batch_size"].get<int>() - 1) /
                      run_cfg["train"]["batch_size"].get<int>();
    TrainConfig tc = train_config_from_json(run_cfg, iters);

    Rng rng(tc.seed);
    Rng model_rng = rng.split(1);
    Rng head_rng = rng.split(2);
    Mlp model = model_from_json(run_cfg, data.train.dim(), model_rng);
    ClassifierHead head = make_head(data.train.num_classes, model.feature_dim(), head_rng);
    TrainResult result = train_supervised(data.train, data.test, model, head, tc);

    csv.row({fmt_g17(lambda0), fmt_g17(result.final_error),
             fmt_g17(result.history.back().train_loss)});
    csv.sync();
    rows.push_back({{"lambda0", lambda0}, {"final_error", result.final_error}});
    std::printf("sweep-lambda: lambda0=%.3g final_error=%.6f\n", lambda0, result.final_error);
  }
  json summary{{"schema_version", 1},
               {"subcommand", "sweep-lambda"},
               {"config", config},
               {"results", {{"rows", rows}}}};
  write_summary(out_dir, summary);
  return 0;
}

int run_ablate(const json& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  struct Variant {
    const char* tag;
    const char* cov_mode;
    const char* schedule;
  };
  const Variant variants[] = {
      {"full", "full", "linear_ramp"},           {"identity", "identity", "linear_ramp"},
      {"diagonal", "diagonal", "linear_ramp"},   {"shared", "shared", "linear_ramp"},
      {"constant_lambda", "full", "constant"},
  };
  CsvWriter csv(out_dir + "/ablate.csv", "variant,final_error,final_train_loss");
  json rows = json::array();
  for (const auto& v : variants) {
    json run_cfg = config;
    run_cfg["isda"]["cov_mode"] = v.cov_mode;
    run_cfg["isda"]["schedule"] = v.schedule;
    BuiltData data = build_data(run_cfg);
    const int iters = (data.train.size() + run_cfg["train"]["batch_size"].get<int>() - 1) /
                      run_cfg["train"]["batch_size"].get<int>();
    TrainConfig tc = train_config_from_json(run_cfg, iters);

    Rng rng(tc.seed);
    Rng model_rng = rng.split(1);
    Rng head_rng = rng.split(2);
    Mlp model = model_from_json(run_cfg, data.train.dim(), model_rng);
    ClassifierHead head = make_head(data.train.num_classes, model.feature_dim(), head_rng);
    TrainResult result = train_supervised(data.train, data.test, model, head, tc);

    csv.row({v.tag, fmt_g17(result.final_error), fmt_g17(result.history.back().train_loss)});
    csv.sync();
    rows.push_back({{"variant", v.tag}, {"final_error", result.final_error}});
    std::printf("ablate: %s final_error=%.6f\n", v.tag, result.final_error);
  }
  json summary{{"schema_version", 1},
               {"subcommand", "ablate"},
               {"config", config},
               {"results", {{"rows", rows}}}};
  write_summary(out_dir, summary);
  return 0;
}

int run_report_timing(const std::string& baseline_dir, const std::string& isda_dir,
                      const std::string& out_dir) {
  auto read_summary = [](const std::string& dir) {
    std::ifstream in(dir + "/summary.json");
    if (!in) throw std::runtime_error("report-timing: missing " + dir + "/summary.json");
    json j;
    in >> j;
    return j;
  };
  const json base = read_summary(baseline_dir);
  const json isda = read_summary(isda_dir);

  // Paired runs must agree on everything except the loss settings.
  json base_cfg = base.at("config");
  json isda_cfg = isda.at("config");
  base_cfg.erase("isda");
  isda_cfg.erase("isda");
  base_cfg["train"].erase("loss");
  isda_cfg["train"].erase("loss");
  if (base_cfg != isda_cfg) {
    std::fprintf(stderr, "report-timing: configs differ beyond loss settings\n");
    return 2;
  }

  const double base_ms = base.at("results").at("train_wall_ms").get<double>();
  const double isda_ms = isda.at("results").at("train_wall_ms").get<double>();
  const double wall_overhead = (isda_ms - base_ms) / base_ms;

  const int64_t extra = isda.at("results").at("isda_extra_flops_per_sample").get<int64_t>();
  const int64_t model_flops = isda.at("results").at("model_flops_per_sample").get<int64_t>();
  const double theoretical = static_cast<double>(extra) / static_cast<double>(model_flops);

  json report{{"schema_version", 1},
              {"subcommand", "report-timing"},
              {"baseline_train_wall_ms", base_ms},
              {"isda_train_wall_ms", isda_ms},
              {"wall_overhead", wall_overhead},
              {"isda_extra_flops_per_sample", extra},
              {"model_flops_per_sample", model_flops},
              {"theoretical_overhead", theoretical}};
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir + "/timing.json");
    out << report.dump(2) << "\n";
  }
  std::printf("report-timing: wall overhead %.2f%%, analytic extra flops/sample %" PRId64
              " (theoretical %.2f%% of model cost)\n",
              100.0 * wall_overhead, extra, 100.0 * theoretical);
  return 0;
}

}  // namespace isda::runner
