#pragma once

// Explicit feature augmentation and Monte-Carlo estimation of the expected
// losses the closed-form surrogates bound. Draw streams are keyed on
// (sample index, draw index), so estimates do not depend on the degree of
// parallelism, and draws are never materialized for large M — a streaming
// (count, mean, M2) accumulator does the bookkeeping.

#include <utility>

#include "isda/loss.hpp"
#include "isda/semi.hpp"

namespace isda {

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

// M independent draws from N(a, lambda * Sigma_y), one per row.
Mat sample_augmented(const Vec& a, int y, double lambda, const CovTracker& tracker,
                     CovMode view, int M, Rng& rng);

// (1/N) sum_i (1/M) sum_m CE(head, a_i^m, y_i): one realization of the
// explicitly augmented loss.
double explicit_loss(const LabeledBatch& batch, const ClassifierHead& head,
                     const CovTracker& tracker, CovMode view, double lambda, int M, Rng& rng);

// Monte-Carlo estimate of the expected CE under augmentation, with the
// standard error derived from the per-draw sample variance (/(M-1)).
McEstimate mc_expected_ce(const LabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, CovMode view, double lambda, int M,
                          Rng& rng);

// Soft-target analogue: per draw, sum_k -p_ik log softmax_k(W a~ + b),
// covariance class taken from the pseudo label of each row.
McEstimate mc_expected_kl(const UnlabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, CovMode view, double lambda, int M,
                          Rng& rng);

}  // namespace isda
