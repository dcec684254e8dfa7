#pragma once

// Straight-line serial reference implementations of the hot kernels.
// No blocking, no OpenMP, no per-call caches: each formula is written the
// obvious way. Tests check the production kernels against these, and the
// benchmark target compares their throughput.

#include "isda/loss.hpp"
#include "isda/mc.hpp"
#include "isda/semi.hpp"

namespace isda::ref {

// One-shot population statistics of all class-j rows (two-pass).
struct ClassMoments {
  int64_t count = 0;
  Vec mean;
  Mat cov;
};
ClassMoments population_moments(const Mat& features, const std::vector<int>& labels,
                                int class_id, int feature_dim);

// Value-and-gradients of the supervised surrogate, one sample at a time.
LossReport surrogate_loss(const LabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, double lambda, CovMode view);

// Soft-target consistency surrogate evaluated through its decomposition
// into hard-label surrogates with the pseudo-label covariance.
LossReport consistency_surrogate(const UnlabeledBatch& batch, const ClassifierHead& head,
                                 const CovTracker& tracker, double lambda, CovMode view);

// Jensen/moment-generating intermediate of the surrogate's derivation:
// (1/N) sum_i log sum_j E[exp(v_jy . a~ + b_j - b_y)] in closed form.
// Identical to the surrogate value up to rounding.
double mgf_intermediate(const LabeledBatch& batch, const ClassifierHead& head,
                        const CovTracker& tracker, double lambda, CovMode view);

// Monte-Carlo expected CE without chunking or parallelism.
McEstimate mc_expected_ce(const LabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, CovMode view, double lambda, int M,
                          Rng& rng);

}  // namespace isda::ref
