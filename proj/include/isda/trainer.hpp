#pragma once

// Training harness: mini-batch SGD with Nesterov momentum over the MLP
// feature extractor and the classifier head, covariance tracking from
// forward-pass features, the lambda ramp, and the semi-supervised combined
// objective. Deterministic: identical (seed, config, data) reproduces the
// final parameters bit-exactly, independent of thread count.

#include <cstdint>
#include <string>
#include <vector>

#include "isda/covariance.hpp"
#include "isda/datasets.hpp"
#include "isda/loss.hpp"
#include "isda/mlp.hpp"
#include "isda/semi.hpp"
#include "isda/sgd.hpp"

namespace isda {

enum class LossKind : uint8_t { Isda = 0, CrossEntropy = 1 };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  uint64_t seed = 0;
  LossKind loss = LossKind::Isda;

  double lambda0 = 0.5;
  Schedule schedule = Schedule::LinearRamp;
  CovMode cov_mode = CovMode::Full;
  // Iterations over which lambda ramps to lambda0; <= 0 means the whole run.
  int64_t ramp_iterations = -1;

  SgdConfig sgd;

  // Semi-supervised options.
  SemiWeights semi;
  double pi_noise_std = 0.15;  // input perturbation of the reference regularizer

  int eval_last_k = 10;

  // Per-epoch bound probe: surrogate vs Monte-Carlo estimate on a fixed
  // probe batch when draws > 0.
  int probe_draws = 0;
  int probe_batch = 128;
};

struct EpochRecord {
  int epoch = 0;
  int64_t iteration = 0;  // iterations completed at the end of this epoch
  double lambda = 0.0;
  double train_loss = 0.0;  // mean over the epoch's batches
  double test_error = 0.0;
  double wall_ms = 0.0;
};

struct BoundProbe {
  int64_t iteration = 0;
  double surrogate = 0.0;
  double mc_estimate = 0.0;
  double mc_stderr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<BoundProbe> probes;
  double final_error = 0.0;  // mean test error of the last eval_last_k epochs
  double train_wall_ms = 0.0;  // forward/loss/backward/step time, eval excluded
  CovTracker tracker;
  SgdState sgd;  // final optimizer state, enough to build a resumable checkpoint
};

// Error rate: fraction of argmax-misclassified samples (ties toward the
// smaller class index).
double evaluate(const Mlp& model, const ClassifierHead& head, const Dataset& test);

// Mean of the last k entries' test errors.
double last_k_mean_error(const std::vector<EpochRecord>& history, int k);

ClassifierHead make_head(int num_classes, int feature_dim, Rng& rng);

TrainResult train_supervised(const Dataset& train, const Dataset& test, Mlp& model,
                             ClassifierHead& head, const TrainConfig& config);

// Labeled + unlabeled training with the combined objective. The tracker
// sees labeled features only; unlabeled predictions are recomputed each
// iteration and treated as constants.
TrainResult train_semi(const Dataset& labeled, const Dataset& unlabeled, const Dataset& test,
                       Mlp& model, ClassifierHead& head, const TrainConfig& config);

// Versioned binary checkpoint of everything a resumed run needs.
struct Checkpoint {
  Mlp model;
  ClassifierHead head;
  CovTracker tracker;
  SgdState sgd;
  int64_t epoch = 0;      // epochs completed
  int64_t iteration = 0;  // iterations completed
  uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Continues a supervised run from a checkpoint until config.epochs total
// epochs; bit-identical to a run that never stopped.
TrainResult resume_supervised(const Dataset& train, const Dataset& test, Checkpoint& ckpt,
                              const TrainConfig& config);

}  // namespace isda
