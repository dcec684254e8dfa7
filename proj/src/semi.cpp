#include "isda/semi.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace isda {

namespace {

void validate_probs(const Mat& probs) {
  for (int i = 0; i < probs.rows; ++i) {
    double sum = 0.0;
    const double* p = probs.row(i);
    for (int k = 0; k < probs.cols; ++k) {
      if (!(p[k] >= 0.0 && p[k] <= 1.0)) {
        throw std::invalid_argument("probs: entry outside [0,1] at row " + std::to_string(i));
      }
      sum += p[k];
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument("probs: row " + std::to_string(i) + " does not sum to 1");
    }
  }
}

}  // namespace

std::vector<int> pseudo_labels(const Mat& probs) {
  if (probs.rows < 1 || probs.cols < 1) throw std::invalid_argument("pseudo_labels: empty input");
  validate_probs(probs);
  std::vector<int> out(probs.rows);
  for (int i = 0; i < probs.rows; ++i) {
    const double* p = probs.row(i);
    int best = 0;
    for (int k = 1; k < probs.cols; ++k) {
      if (p[k] > p[best]) best = k;  // strict: ties keep the smaller index
    }
    out[i] = best;
  }
  return out;
}

namespace {

constexpr int kBlock = 32;

struct BlockAccum {
  double loss = 0.0;
  Mat grad_W;
  Vec grad_b;
};

}  // namespace

LossReport consistency_surrogate(const UnlabeledBatch& batch, const ClassifierHead& head,
                                 const CovTracker& tracker, double lambda, CovMode view) {
  const int B = batch.features.rows;
  const int C = head.W.rows;
  const int A = head.W.cols;
  if (B < 1) throw std::invalid_argument("consistency_surrogate: empty batch");
  if (batch.features.cols != A) {
    throw std::invalid_argument("consistency_surrogate: feature dim mismatch");
  }
  if (batch.probs.rows != B || batch.probs.cols != C) {
    throw std::invalid_argument("consistency_surrogate: probs shape mismatch");
  }
  if (tracker.feature_dim() != A || tracker.num_classes() != C) {
    throw std::invalid_argument("consistency_surrogate: tracker dims mismatch");
  }
  if (lambda < 0.0) throw std::invalid_argument("consistency_surrogate: lambda must be >= 0");
  if (lambda != 0.0 && !tracker.supports(view)) {
    throw std::invalid_argument("consistency_surrogate: covariance view unsupported by tracker");
  }
  validate_probs(batch.probs);
  const std::vector<int> pseudo = pseudo_labels(batch.probs);

  LossReport rep;
  rep.grad_W = Mat(C, A, 0.0);
  rep.grad_b.assign(C, 0.0);
  rep.grad_features = Mat(B, A, 0.0);

  const bool quad = (lambda != 0.0);
  const int nblocks = (B + kBlock - 1) / kBlock;
  std::vector<BlockAccum> acc(nblocks);
  std::atomic<int> bad_sample{-1};

#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < nblocks; ++blk) {
    BlockAccum& bacc = acc[blk];
    bacc.grad_W = Mat(C, A, 0.0);
    bacc.grad_b.assign(C, 0.0);
    Vec base(C), z(C), phat(C), coef(C), wavg(A);
    Mat T(C, A);  // T.row(j) = Sigma_pseudo * w_j
    Mat G(C, C);  // G(j,k) = w_j^T Sigma_pseudo w_k

    const int lo = blk * kBlock;
    const int hi = std::min(B, lo + kBlock);
    for (int i = lo; i < hi; ++i) {
      const double* a = batch.features.row(i);
      const double* p = batch.probs.row(i);
      const int c = pseudo[i];

      for (int j = 0; j < C; ++j) base[j] = dot(head.W.row(j), a, A) + head.b[j];
      if (quad) {
        for (int j = 0; j < C; ++j) tracker.apply_cov(c, view, head.W.row(j), T.row(j));
        for (int j = 0; j < C; ++j) {
          for (int k = 0; k <= j; ++k) {
            const double g = dot(head.W.row(j), T.row(k), A);
            G(j, k) = g;
            G(k, j) = g;
          }
        }
      }

      std::fill(coef.begin(), coef.end(), 0.0);
      bool ok = true;
      for (int k = 0; k < C && ok; ++k) {
        const double pk = p[k];
        if (pk == 0.0) continue;  // degenerate soft label: skip the term entirely
        if (quad) {
          for (int j = 0; j < C; ++j) {
            z[j] = base[j] + 0.5 * lambda * (G(j, j) - 2.0 * G(j, k) + G(k, k));
          }
        } else {
          z = base;
        }
        for (int j = 0; j < C; ++j) ok = ok && std::isfinite(z[j]);
        if (!ok) break;

        const double lse = logsumexp(z.data(), C);
        bacc.loss += pk * (lse - z[k]);
        for (int j = 0; j < C; ++j) phat[j] = std::exp(z[j] - lse);

        // Linear-path coefficients shared by grad_b, grad_features and the
        // a-outer-product part of grad_W.
        for (int j = 0; j < C; ++j) coef[j] += pk * (phat[j] - (j == k ? 1.0 : 0.0));

        if (quad) {
          // Row r: +lambda pk phat_r (T_r - T_k); row k additionally
          // -lambda pk (sum_j phat_j T_j - T_k).
          std::memset(wavg.data(), 0, sizeof(double) * A);
          for (int j = 0; j < C; ++j) axpy(phat[j], T.row(j), wavg.data(), A);
          for (int r = 0; r < C; ++r) {
            if (phat[r] == 0.0 || r == k) continue;
            axpy(lambda * pk * phat[r], T.row(r), bacc.grad_W.row(r), A);
            axpy(-lambda * pk * phat[r], T.row(k), bacc.grad_W.row(r), A);
          }
          axpy(-lambda * pk, wavg.data(), bacc.grad_W.row(k), A);
          axpy(lambda * pk, T.row(k), bacc.grad_W.row(k), A);
        }
      }
      if (!ok) {
        int expected = -1;
        bad_sample.compare_exchange_strong(expected, i);
        continue;
      }

      double* gf = rep.grad_features.row(i);
      for (int j = 0; j < C; ++j) {
        bacc.grad_b[j] += coef[j];
        axpy(coef[j], head.W.row(j), gf, A);
        axpy(coef[j], a, bacc.grad_W.row(j), A);
      }
    }
  }

  if (bad_sample.load() >= 0) {
    throw std::runtime_error("consistency_surrogate: non-finite logits at sample " +
                             std::to_string(bad_sample.load()));
  }

  for (const auto& bacc : acc) {
    rep.loss += bacc.loss;
    for (size_t k = 0; k < rep.grad_W.d.size(); ++k) rep.grad_W.d[k] += bacc.grad_W.d[k];
    for (int j = 0; j < C; ++j) rep.grad_b[j] += bacc.grad_b[j];
  }
  const double inv = 1.0 / static_cast<double>(B);
  rep.loss *= inv;
  for (auto& g : rep.grad_W.d) g *= inv;
  for (auto& g : rep.grad_b) g *= inv;
  for (auto& g : rep.grad_features.d) g *= inv;
  return rep;
}

CombinedReport combined_loss(const LabeledBatch& labeled, const UnlabeledBatch& unlabeled,
                             const ClassifierHead& head, const CovTracker& tracker,
                             const AugmentationConfig& config, const SemiWeights& weights,
                             const Regularizer& regularizer) {
  if (weights.eta1 < 0.0 || weights.eta2 < 0.0) {
    throw std::invalid_argument("combined_loss: weights must be >= 0");
  }
  const int C = head.W.rows;
  const int A = head.W.cols;

  CombinedReport rep;
  rep.grad_W = Mat(C, A, 0.0);
  rep.grad_b.assign(C, 0.0);

  if (labeled.features.rows > 0) {
    LossReport sup = surrogate_loss(labeled, head, tracker, config);
    rep.supervised = sup.loss;
    rep.grad_W = std::move(sup.grad_W);
    rep.grad_b = std::move(sup.grad_b);
    rep.grad_labeled_features = std::move(sup.grad_features);
  } else {
    rep.grad_labeled_features = Mat(0, A);
  }

  if (unlabeled.features.rows > 0 && weights.eta1 > 0.0) {
    const double lambda = lambda_at(config);
    LossReport cons = consistency_surrogate(unlabeled, head, tracker, lambda, config.cov_mode);
    rep.consistency = cons.loss;
    for (size_t k = 0; k < rep.grad_W.d.size(); ++k) {
      rep.grad_W.d[k] += weights.eta1 * cons.grad_W.d[k];
    }
    for (int j = 0; j < C; ++j) rep.grad_b[j] += weights.eta1 * cons.grad_b[j];
    rep.grad_unlabeled_features = std::move(cons.grad_features);
    for (auto& g : rep.grad_unlabeled_features.d) g *= weights.eta1;
  } else {
    rep.grad_unlabeled_features = Mat(unlabeled.features.rows, A, 0.0);
  }

  if (regularizer && weights.eta2 > 0.0) {
    RegularizerOutput reg = regularizer();
    rep.regularization = reg.loss;
    if (reg.grad_W.rows > 0) {
      if (!reg.grad_W.same_shape(rep.grad_W)) {
        throw std::invalid_argument("combined_loss: regularizer grad_W shape mismatch");
      }
      for (size_t k = 0; k < rep.grad_W.d.size(); ++k) {
        rep.grad_W.d[k] += weights.eta2 * reg.grad_W.d[k];
      }
      for (int j = 0; j < C; ++j) rep.grad_b[j] += weights.eta2 * reg.grad_b[j];
    }
  }

  rep.loss = rep.supervised + weights.eta1 * rep.consistency + weights.eta2 * rep.regularization;
  return rep;
}

}  // namespace isda
