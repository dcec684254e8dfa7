#include "isda/loss.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace isda {

double lambda_at(const AugmentationConfig& config) {
  if (config.lambda0 < 0.0) throw std::invalid_argument("lambda0 must be >= 0");
  if (config.T < 1) throw std::invalid_argument("T must be >= 1");
  if (config.t < 0 || config.t > config.T) throw std::invalid_argument("need 0 <= t <= T");
  if (config.schedule == Schedule::Constant) return config.lambda0;
  return (static_cast<double>(config.t) / static_cast<double>(config.T)) * config.lambda0;
}

Vec adjusted_logits_about(const Vec& a, int target, int cov_class, const ClassifierHead& head,
                          const CovTracker& tracker, double lambda, CovMode view) {
  const int C = head.W.rows;
  const int A = head.W.cols;
  if (static_cast<int>(a.size()) != A) throw std::invalid_argument("adjusted_logits: feature dim mismatch");
  if (static_cast<int>(head.b.size()) != C) throw std::invalid_argument("adjusted_logits: bias dim mismatch");
  if (tracker.feature_dim() != A || tracker.num_classes() != C) {
    throw std::invalid_argument("adjusted_logits: tracker dims mismatch");
  }
  if (target < 0 || target >= C || cov_class < 0 || cov_class >= C) {
    throw std::invalid_argument("adjusted_logits: class out of range");
  }
  if (lambda < 0.0) throw std::invalid_argument("adjusted_logits: lambda must be >= 0");

  Vec z(C);
  for (int j = 0; j < C; ++j) z[j] = dot(head.W.row(j), a.data(), A) + head.b[j];
  if (lambda != 0.0) {
    const double* wt = head.W.row(target);
    Vec v(A), s(A);
    for (int j = 0; j < C; ++j) {
      if (j == target) continue;
      const double* wj = head.W.row(j);
      for (int k = 0; k < A; ++k) v[k] = wj[k] - wt[k];
      tracker.apply_cov(cov_class, view, v.data(), s.data());
      z[j] += 0.5 * lambda * dot(v.data(), s.data(), A);
    }
  }
  return z;
}

Vec adjusted_logits(const Vec& a, int y, const ClassifierHead& head, const CovTracker& tracker,
                    double lambda, CovMode view) {
  return adjusted_logits_about(a, y, y, head, tracker, lambda, view);
}

namespace {

constexpr int kBlock = 32;  // samples per reduction block; fixed so results
                            // do not depend on the number of threads

struct BlockAccum {
  double loss = 0.0;
  Mat grad_W;
  Vec grad_b;
};

// Shared core of surrogate_loss and cross_entropy. tracker may be null
// only when lambda == 0.
LossReport surrogate_core(const Mat& X, const std::vector<int>& labels,
                          const ClassifierHead& head, const CovTracker* tracker, CovMode view,
                          double lambda) {
  const int B = X.rows;
  const int C = head.W.rows;
  const int A = head.W.cols;
  if (B < 1) throw std::invalid_argument("surrogate_loss: empty batch");
  if (X.cols != A) throw std::invalid_argument("surrogate_loss: feature dim mismatch");
  if (static_cast<int>(labels.size()) != B) {
    throw std::invalid_argument("surrogate_loss: label count mismatch");
  }
  if (static_cast<int>(head.b.size()) != C) {
    throw std::invalid_argument("surrogate_loss: bias dim mismatch");
  }
  for (int i = 0; i < B; ++i) {
    if (labels[i] < 0 || labels[i] >= C) {
      throw std::invalid_argument("surrogate_loss: label out of range at sample " +
                                  std::to_string(i));
    }
  }
  const bool quad = (lambda != 0.0);
  if (quad && tracker == nullptr) {
    throw std::invalid_argument("surrogate_loss: tracker required when lambda > 0");
  }
  if (quad) {
    if (tracker->feature_dim() != A || tracker->num_classes() != C) {
      throw std::invalid_argument("surrogate_loss: tracker dims mismatch");
    }
    if (!tracker->supports(view)) {
      throw std::invalid_argument("surrogate_loss: covariance view unsupported by tracker");
    }
  }

  LossReport rep;
  rep.grad_W = Mat(C, A, 0.0);
  rep.grad_b.assign(C, 0.0);
  rep.grad_features = Mat(B, A, 0.0);

  const int nblocks = (B + kBlock - 1) / kBlock;
  std::vector<BlockAccum> acc(nblocks);
  std::atomic<int> bad_sample{-1};

#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < nblocks; ++blk) {
    BlockAccum& bacc = acc[blk];
    bacc.grad_W = Mat(C, A, 0.0);
    bacc.grad_b.assign(C, 0.0);
    Vec z(C), p(C), v(A);
    Mat S(C, A);  // S.row(j) = Sigma_y * (w_j - w_y), reused per sample

    const int lo = blk * kBlock;
    const int hi = std::min(B, lo + kBlock);
    for (int i = lo; i < hi; ++i) {
      const double* a = X.row(i);
      const int y = labels[i];
      const double* wy = head.W.row(y);

      for (int j = 0; j < C; ++j) z[j] = dot(head.W.row(j), a, A) + head.b[j];
      if (quad) {
        for (int j = 0; j < C; ++j) {
          if (j == y) {
            std::memset(S.row(j), 0, sizeof(double) * A);
            continue;
          }
          const double* wj = head.W.row(j);
          for (int k = 0; k < A; ++k) v[k] = wj[k] - wy[k];
          tracker->apply_cov(y, view, v.data(), S.row(j));
          z[j] += 0.5 * lambda * dot(v.data(), S.row(j), A);
        }
      }

      bool ok = true;
      for (int j = 0; j < C; ++j) ok = ok && std::isfinite(z[j]);
      if (!ok) {
        int expected = -1;
        bad_sample.compare_exchange_strong(expected, i);
        continue;
      }

      const double lse = logsumexp(z.data(), C);
      bacc.loss += lse - z[y];
      for (int j = 0; j < C; ++j) p[j] = std::exp(z[j] - lse);

      // d loss / d b = p - onehot(y); d loss / d a = W^T (p - onehot(y)).
      double* gf = rep.grad_features.row(i);
      for (int j = 0; j < C; ++j) {
        const double coef = p[j] - (j == y ? 1.0 : 0.0);
        bacc.grad_b[j] += coef;
        axpy(coef, head.W.row(j), gf, A);
        axpy(coef, a, bacc.grad_W.row(j), A);
      }
      if (quad) {
        // Quadratic path: +lambda p_j Sigma v_jy on row j, the mirror sum
        // subtracted from row y (S.row(y) is zero, so j = y is harmless).
        double* gwy = bacc.grad_W.row(y);
        for (int j = 0; j < C; ++j) {
          axpy(lambda * p[j], S.row(j), bacc.grad_W.row(j), A);
          axpy(-lambda * p[j], S.row(j), gwy, A);
        }
      }
    }
  }

  if (bad_sample.load() >= 0) {
    throw std::runtime_error("surrogate_loss: non-finite logits at sample " +
                             std::to_string(bad_sample.load()));
  }

  // Serial merge in block order keeps the result thread-count independent.
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

}  // namespace

LossReport surrogate_loss(const LabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, const AugmentationConfig& config) {
  const double lambda = lambda_at(config);
  return surrogate_core(batch.features, batch.labels, head, &tracker, config.cov_mode, lambda);
}

LossReport cross_entropy(const LabeledBatch& batch, const ClassifierHead& head) {
  return surrogate_core(batch.features, batch.labels, head, nullptr, CovMode::Identity, 0.0);
}

double cross_entropy_value(const double* a, int y, const ClassifierHead& head) {
  const int C = head.W.rows;
  const int A = head.W.cols;
  Vec z(C);
  for (int j = 0; j < C; ++j) z[j] = dot(head.W.row(j), a, A) + head.b[j];
  return logsumexp(z.data(), C) - z[y];
}

int64_t isda_extra_flops_per_sample(CovMode mode, int feature_dim, int num_classes) {
  const int64_t A = feature_dim;
  const int64_t C = num_classes;
  switch (mode) {
    case CovMode::Full:
    case CovMode::Shared:
      return A * A + C * A * A;
    case CovMode::Diagonal:
      return A + C * A;
    case CovMode::Identity:
      return C * A;
  }
  return 0;
}

}  // namespace isda
