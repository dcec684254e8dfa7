#include "isda/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace isda::ref {

ClassMoments population_moments(const Mat& features, const std::vector<int>& labels,
                                int class_id, int feature_dim) {
  const int A = feature_dim;
  ClassMoments m;
  m.mean.assign(A, 0.0);
  m.cov = Mat(A, A, 0.0);
  for (int i = 0; i < features.rows; ++i) {
    if (labels[i] != class_id) continue;
    m.count += 1;
    axpy(1.0, features.row(i), m.mean.data(), A);
  }
  if (m.count == 0) return m;
  for (int a = 0; a < A; ++a) m.mean[a] /= static_cast<double>(m.count);
  for (int i = 0; i < features.rows; ++i) {
    if (labels[i] != class_id) continue;
    const double* x = features.row(i);
    for (int r = 0; r < A; ++r) {
      for (int c = 0; c < A; ++c) {
        m.cov(r, c) += (x[r] - m.mean[r]) * (x[c] - m.mean[c]);
      }
    }
  }
  for (auto& v : m.cov.d) v /= static_cast<double>(m.count);
  return m;
}

namespace {

Vec softmax(const Vec& z) {
  const double lse = logsumexp(z);
  Vec p(z.size());
  for (size_t j = 0; j < z.size(); ++j) p[j] = std::exp(z[j] - lse);
  return p;
}

// Adds the gradients of [-z_k + logsumexp(z^{(k)})] (adjusted about
// cov_class) with weight w into the accumulators.
void add_hard_label_grads(const Vec& a, int k, int cov_class, const ClassifierHead& head,
                          const CovTracker& tracker, double lambda, CovMode view, double w,
                          Mat& gW, Vec& gb, double* gfeat) {
  const int C = head.W.rows;
  const int A = head.W.cols;
  const Vec z = adjusted_logits_about(a, k, cov_class, head, tracker, lambda, view);
  const Vec p = softmax(z);
  Vec v(A), s(A);
  for (int j = 0; j < C; ++j) {
    const double coef = p[j] - (j == k ? 1.0 : 0.0);
    gb[j] += w * coef;
    axpy(w * coef, head.W.row(j), gfeat, A);
    axpy(w * coef, a.data(), gW.row(j), A);
    if (lambda != 0.0 && j != k) {
      for (int t = 0; t < A; ++t) v[t] = head.W(j, t) - head.W(k, t);
      tracker.apply_cov(cov_class, view, v.data(), s.data());
      axpy(w * lambda * p[j], s.data(), gW.row(j), A);
      axpy(-w * lambda * p[j], s.data(), gW.row(k), A);
    }
  }
}

}  // namespace

LossReport surrogate_loss(const LabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, double lambda, CovMode view) {
  const int B = batch.features.rows;
  const int C = head.W.rows;
  const int A = head.W.cols;
  if (B < 1) throw std::invalid_argument("ref::surrogate_loss: empty batch");

  LossReport rep;
  rep.grad_W = Mat(C, A, 0.0);
  rep.grad_b.assign(C, 0.0);
  rep.grad_features = Mat(B, A, 0.0);

  for (int i = 0; i < B; ++i) {
    Vec a(batch.features.row(i), batch.features.row(i) + A);
    const int y = batch.labels[i];
    const Vec z = adjusted_logits(a, y, head, tracker, lambda, view);
    rep.loss += logsumexp(z) - z[y];
    add_hard_label_grads(a, y, y, head, tracker, lambda, view, 1.0, rep.grad_W, rep.grad_b,
                         rep.grad_features.row(i));
  }
  const double inv = 1.0 / B;
  rep.loss *= inv;
  for (auto& g : rep.grad_W.d) g *= inv;
  for (auto& g : rep.grad_b) g *= inv;
  for (auto& g : rep.grad_features.d) g *= inv;
  return rep;
}

LossReport consistency_surrogate(const UnlabeledBatch& batch, const ClassifierHead& head,
                                 const CovTracker& tracker, double lambda, CovMode view) {
  const int B = batch.features.rows;
  const int C = head.W.rows;
  const int A = head.W.cols;
  if (B < 1) throw std::invalid_argument("ref::consistency_surrogate: empty batch");
  const std::vector<int> pseudo = pseudo_labels(batch.probs);

  LossReport rep;
  rep.grad_W = Mat(C, A, 0.0);
  rep.grad_b.assign(C, 0.0);
  rep.grad_features = Mat(B, A, 0.0);

  for (int i = 0; i < B; ++i) {
    Vec a(batch.features.row(i), batch.features.row(i) + A);
    const int c = pseudo[i];
    for (int k = 0; k < C; ++k) {
      const double pk = batch.probs(i, k);
      if (pk == 0.0) continue;
      const Vec z = adjusted_logits_about(a, k, c, head, tracker, lambda, view);
      rep.loss += pk * (logsumexp(z) - z[k]);
      add_hard_label_grads(a, k, c, head, tracker, lambda, view, pk, rep.grad_W, rep.grad_b,
                           rep.grad_features.row(i));
    }
  }
  const double inv = 1.0 / B;
  rep.loss *= inv;
  for (auto& g : rep.grad_W.d) g *= inv;
  for (auto& g : rep.grad_b) g *= inv;
  for (auto& g : rep.grad_features.d) g *= inv;
  return rep;
}

double mgf_intermediate(const LabeledBatch& batch, const ClassifierHead& head,
                        const CovTracker& tracker, double lambda, CovMode view) {
  const int B = batch.features.rows;
  const int C = head.W.rows;
  const int A = head.W.cols;
  double total = 0.0;
  Vec v(A), s(A), terms(C);
  for (int i = 0; i < B; ++i) {
    const double* a = batch.features.row(i);
    const int y = batch.labels[i];
    for (int j = 0; j < C; ++j) {
      for (int t = 0; t < A; ++t) v[t] = head.W(j, t) - head.W(y, t);
      tracker.apply_cov(y, view, v.data(), s.data());
      // log E[exp(v . a~ + db)] for a~ ~ N(a, lambda Sigma_y): the mean of
      // the Gaussian exponent plus half its variance.
      terms[j] = dot(v.data(), a, A) + (head.b[j] - head.b[y]) +
                 0.5 * lambda * dot(v.data(), s.data(), A);
    }
    total += logsumexp(terms);
  }
  return total / B;
}

McEstimate mc_expected_ce(const LabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, CovMode view, double lambda, int M,
                          Rng& rng) {
  const int B = batch.features.rows;
  const int A = head.W.cols;
  double mean_sum = 0.0, var_sum = 0.0;
  for (int i = 0; i < B; ++i) {
    Vec a(batch.features.row(i), batch.features.row(i) + A);
    Mat S = tracker.covariance(batch.labels[i], view);
    for (auto& v : S.d) v *= lambda;
    const Mat L = psd_factor(S, default_jitter(S));

    double mean = 0.0, m2 = 0.0;
    for (int d = 0; d < M; ++d) {
      const Vec x = sample_gaussian(a, L, rng);
      const double loss = cross_entropy_value(x.data(), batch.labels[i], head);
      const double d1 = loss - mean;
      mean += d1 / (d + 1);
      m2 += d1 * (loss - mean);
    }
    mean_sum += mean;
    var_sum += (M > 1 ? m2 / (M - 1) : 0.0) / M;
  }
  McEstimate est;
  est.estimate = mean_sum / B;
  est.std_error = std::sqrt(var_sum) / B;
  return est;
}

}  // namespace isda::ref
