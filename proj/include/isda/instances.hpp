#pragma once

// Randomized (head, tracker, batch) instances shared by the property
// suite and the test binaries. The tracker is fed real Gaussian feature
// batches, so its covariances are genuine PSD estimates.

#include <cmath>

#include "isda/loss.hpp"
#include "isda/semi.hpp"

namespace isda {

struct RandomInstance {
  ClassifierHead head;
  CovTracker tracker;
  LabeledBatch batch;
  UnlabeledBatch soft_batch;  // same features, random soft targets
};

// A <= feature dims, C classes, B batch rows. spread scales the feature
// covariance fed to the tracker.
inline RandomInstance make_random_instance(int A, int C, int B, double spread, Rng& rng,
                                           CovMode mode = CovMode::Full) {
  RandomInstance inst{ClassifierHead{}, CovTracker(C, A, mode), LabeledBatch{}, UnlabeledBatch{}};
  inst.head.W = Mat(C, A);
  for (auto& w : inst.head.W.d) w = rng.next_normal();
  inst.head.b.assign(C, 0.0);
  for (auto& b : inst.head.b) b = 0.3 * rng.next_normal();

  // Feed every class enough samples for a full-rank covariance estimate.
  const int per_class = 2 * A + 4;
  Mat feats(C * per_class, A);
  std::vector<int> labels(C * per_class);
  for (int c = 0; c < C; ++c) {
    Vec center(A);
    for (auto& v : center) v = rng.next_normal();
    Vec scale(A);
    for (auto& s : scale) s = spread * (0.2 + 0.8 * rng.next_uniform());
    for (int i = 0; i < per_class; ++i) {
      const int row = c * per_class + i;
      labels[row] = c;
      double* x = feats.row(row);
      for (int a = 0; a < A; ++a) x[a] = center[a] + scale[a] * rng.next_normal();
      // Mix coordinates so full-mode covariances have off-diagonal mass.
      for (int a = 1; a < A; ++a) x[a] += 0.5 * x[a - 1];
    }
  }
  inst.tracker.update(feats, labels);

  inst.batch.features = Mat(B, A);
  inst.batch.labels.resize(B);
  for (int i = 0; i < B; ++i) {
    inst.batch.labels[i] = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(C));
    for (int a = 0; a < A; ++a) inst.batch.features(i, a) = rng.next_normal();
  }

  inst.soft_batch.features = inst.batch.features;
  inst.soft_batch.probs = Mat(B, C);
  for (int i = 0; i < B; ++i) {
    double sum = 0.0;
    for (int k = 0; k < C; ++k) {
      const double e = std::exp(1.5 * rng.next_normal());
      inst.soft_batch.probs(i, k) = e;
      sum += e;
    }
    for (int k = 0; k < C; ++k) inst.soft_batch.probs(i, k) /= sum;
    // Renormalize exactly so validation at 1e-9 never trips.
    double s2 = 0.0;
    for (int k = 0; k < C - 1; ++k) s2 += inst.soft_batch.probs(i, k);
    inst.soft_batch.probs(i, C - 1) = 1.0 - s2;
  }
  return inst;
}

}  // namespace isda
