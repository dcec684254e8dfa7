#pragma once

// The supervised surrogate loss: cross-entropy on covariance-adjusted
// logits, with analytic gradients for the head, the biases and the input
// features. At lambda = 0 the adjusted logits are the plain logits and
// the loss is exactly standard cross-entropy (same code path, same
// floating-point operations).

#include <cstdint>
#include <vector>

#include "isda/covariance.hpp"
#include "isda/numeric.hpp"

namespace isda {

struct ClassifierHead {
  Mat W;  // C x A, row j is the weight vector of class j
  Vec b;  // length C
};

enum class Schedule : uint8_t { LinearRamp = 0, Constant = 1 };

struct AugmentationConfig {
  double lambda0 = 0.5;
  Schedule schedule = Schedule::LinearRamp;
  CovMode cov_mode = CovMode::Full;
  int64_t t = 0;  // current iteration
  int64_t T = 1;  // ramp length in iterations
};

struct LabeledBatch {
  Mat features;             // B x A
  std::vector<int> labels;  // length B
};

struct LossReport {
  double loss = 0.0;
  Mat grad_W;         // C x A
  Vec grad_b;         // length C
  Mat grad_features;  // B x A
};

// LinearRamp -> (t/T) * lambda0, Constant -> lambda0.
double lambda_at(const AugmentationConfig& config);

// z_j = w_j . a + b_j + (lambda/2) * v_jy^T Sigma_y v_jy with v_jy = w_j - w_y.
// The target logit carries no quadratic term (v_yy = 0).
Vec adjusted_logits(const Vec& a, int y, const ClassifierHead& head,
                    const CovTracker& tracker, double lambda, CovMode view);

// Generalization used by the semi-supervised loss and its tests: the hard
// label (which logit carries no quadratic term) and the class whose
// covariance shapes the adjustment can differ.
Vec adjusted_logits_about(const Vec& a, int target, int cov_class, const ClassifierHead& head,
                          const CovTracker& tracker, double lambda, CovMode view);

// Mean over the batch of [-z_y + logsumexp(z)] on adjusted logits, with
// gradients. Sigma and mu are treated as constants; W is differentiated
// through both its linear and its quadratic appearance.
LossReport surrogate_loss(const LabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, const AugmentationConfig& config);

// Plain softmax cross-entropy (the lambda = 0 specialization, without a
// tracker). Used by the baseline trainer and the Monte-Carlo oracle.
LossReport cross_entropy(const LabeledBatch& batch, const ClassifierHead& head);

// Scalar CE of a single (feature, label) pair; no gradients.
double cross_entropy_value(const double* a, int y, const ClassifierHead& head);

// Per-sample extra multiply count of ISDA on top of plain CE:
// covariance update plus C quadratic forms. Full/Shared: A^2 + C*A^2;
// Diagonal: A + C*A; Identity: C*A (no tracked second moments).
int64_t isda_extra_flops_per_sample(CovMode mode, int feature_dim, int num_classes);

}  // namespace isda
