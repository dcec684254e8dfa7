#pragma once

// Semi-supervised pieces: pseudo labels, the consistency surrogate (soft
// targets, covariance taken from the pseudo-label class), and the combined
// objective  supervised + eta1 * consistency + eta2 * regularization.
//
// The soft targets are constants: the report carries no gradient for them.

#include <functional>
#include <vector>

#include "isda/loss.hpp"

namespace isda {

struct UnlabeledBatch {
  Mat features;  // B x A
  Mat probs;     // B x C, rows sum to 1; typically softmax of current logits
};

struct SemiWeights {
  double eta1 = 1.0;
  double eta2 = 0.0;
};

// argmax per probability row, ties broken toward the smallest class index.
std::vector<int> pseudo_labels(const Mat& probs);

// (1/N) sum_i sum_k -p_ik log softmax_k(z^(k)) where
// z^(k)_j = w_j . a_i + b_j + (lambda/2) v_jk^T Sigma_{pseudo(i)} v_jk.
// Gradients flow to W, b and the features; probs carry none.
LossReport consistency_surrogate(const UnlabeledBatch& batch, const ClassifierHead& head,
                                 const CovTracker& tracker, double lambda, CovMode view);

// Pluggable regularization term. The callable is expected to close over
// whatever model state it perturbs and to handle its own model-side
// gradients; only the loss value and head gradients surface here,
// unscaled (combined_loss applies eta2).
struct RegularizerOutput {
  double loss = 0.0;
  Mat grad_W;  // C x A, may be empty when the term does not touch the head
  Vec grad_b;
};
using Regularizer = std::function<RegularizerOutput()>;

struct CombinedReport {
  double loss = 0.0;
  double supervised = 0.0;
  double consistency = 0.0;
  double regularization = 0.0;
  Mat grad_W;
  Vec grad_b;
  Mat grad_labeled_features;    // B_l x A
  Mat grad_unlabeled_features;  // B_u x A, already scaled by eta1
};

// supervised + eta1 * consistency + eta2 * regularization. An empty
// labeled or unlabeled batch contributes zero to its term.
CombinedReport combined_loss(const LabeledBatch& labeled, const UnlabeledBatch& unlabeled,
                             const ClassifierHead& head, const CovTracker& tracker,
                             const AugmentationConfig& config, const SemiWeights& weights,
                             const Regularizer& regularizer = nullptr);

}  // namespace isda
