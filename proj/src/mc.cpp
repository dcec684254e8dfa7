#include "isda/mc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace isda {

namespace {

constexpr int kChunk = 4096;  // draws per accumulator chunk; fixed so the
                              // merge order is independent of threading

struct Welford {
  int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    count += 1;
    const double d1 = x - mean;
    mean += d1 / static_cast<double>(count);
    m2 += d1 * (x - mean);
  }

  // Pool two accumulators; the same merge identity as the covariance
  // tracker, in one dimension.
  void merge(const Welford& o) {
    if (o.count == 0) return;
    if (count == 0) {
      *this = o;
      return;
    }
    const double n = static_cast<double>(count);
    const double m = static_cast<double>(o.count);
    const double delta = mean - o.mean;
    const double denom = n + m;
    m2 = m2 + o.m2 + (n * m * delta * delta) / denom;
    mean = (n * mean + m * o.mean) / denom;
    count += o.count;
  }

  double sample_variance() const {
    return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0;
  }
};

// Cholesky factor of lambda * Sigma_y per class, computed once per call.
class FactorCache {
 public:
  FactorCache(const CovTracker& tracker, CovMode view, double lambda)
      : tracker_(tracker), view_(view), lambda_(lambda) {}

  const Mat& get(int class_id) {
    auto it = cache_.find(class_id);
    if (it != cache_.end()) return it->second;
    Mat S = tracker_.covariance(class_id, view_);
    for (auto& v : S.d) v *= lambda_;
    Mat L = psd_factor(S, default_jitter(S));
    return cache_.emplace(class_id, std::move(L)).first->second;
  }

 private:
  const CovTracker& tracker_;
  CovMode view_;
  double lambda_;
  std::map<int, Mat> cache_;
};

// Independent stream for draw d of sample i under a per-call base key.
Rng draw_stream(uint64_t base, uint64_t sample, uint64_t draw) {
  Rng r;
  r.key = Rng::mix(Rng::mix(base ^ (0x9E3779B97F4A7C15ull * (sample + 1))) +
                   0xBF58476D1CE4E5B9ull * draw);
  r.ctr = 0;
  return r;
}

// Soft cross-entropy of one draw: sum_k -p_k log softmax_k(W x + b).
// With hard targets p is a one-hot row materialized by the caller.
double draw_loss(const double* x, const ClassifierHead& head, const double* soft, int hard,
                 Vec& zbuf) {
  const int C = head.W.rows;
  const int A = head.W.cols;
  for (int j = 0; j < C; ++j) zbuf[j] = dot(head.W.row(j), x, A) + head.b[j];
  const double lse = logsumexp(zbuf.data(), C);
  if (soft == nullptr) return lse - zbuf[hard];
  double loss = 0.0;
  for (int k = 0; k < C; ++k) {
    if (soft[k] != 0.0) loss += soft[k] * (lse - zbuf[k]);
  }
  return loss;
}

// Shared engine: per sample, a chunked streaming mean/variance over M
// draws from N(a_i, lambda Sigma_{class_i}); per-(sample, draw) streams.
McEstimate mc_engine(const Mat& X, const std::vector<int>& cov_class, const Mat* soft,
                     const std::vector<int>* hard, const ClassifierHead& head,
                     const CovTracker& tracker, CovMode view, double lambda, int M, Rng& rng) {
  const int B = X.rows;
  const int A = head.W.cols;
  if (B < 1) throw std::invalid_argument("mc oracle: empty batch");
  if (M < 1) throw std::invalid_argument("mc oracle: need M >= 1");
  if (X.cols != A) throw std::invalid_argument("mc oracle: feature dim mismatch");
  if (!tracker.supports(view)) {
    throw std::invalid_argument("mc oracle: covariance view unsupported by tracker");
  }

  FactorCache factors(tracker, view, lambda);
  for (int i = 0; i < B; ++i) factors.get(cov_class[i]);  // fill serially

  const uint64_t base = rng.next_u64();
  const int chunks_per_sample = (M + kChunk - 1) / kChunk;
  const int total_chunks = B * chunks_per_sample;
  std::vector<Welford> partial(total_chunks);

#pragma omp parallel for schedule(dynamic)
  for (int work = 0; work < total_chunks; ++work) {
    const int i = work / chunks_per_sample;
    const int chunk = work % chunks_per_sample;
    const int d0 = chunk * kChunk;
    const int d1 = std::min(M, d0 + kChunk);
    const Mat& L = factors.get(cov_class[i]);
    const double* a = X.row(i);
    const double* p = soft ? soft->row(i) : nullptr;
    const int y = hard ? (*hard)[i] : -1;

    Vec x(A), eps(A), zbuf(head.W.rows);
    Welford w;
    for (int d = d0; d < d1; ++d) {
      Rng draw_rng = draw_stream(base, uint64_t(i), uint64_t(d));
      draw_rng.fill_normal(eps.data(), A);
      for (int r = 0; r < A; ++r) x[r] = a[r] + dot(L.row(r), eps.data(), r + 1);
      w.push(draw_loss(x.data(), head, p, y, zbuf));
    }
    partial[work] = w;
  }

  // Per-sample merge in chunk order, then batch aggregation in sample order.
  double mean_sum = 0.0;
  double var_sum = 0.0;
  for (int i = 0; i < B; ++i) {
    Welford w;
    for (int chunk = 0; chunk < chunks_per_sample; ++chunk) {
      w.merge(partial[i * chunks_per_sample + chunk]);
    }
    mean_sum += w.mean;
    var_sum += w.sample_variance() / static_cast<double>(M);
  }
  McEstimate est;
  est.estimate = mean_sum / static_cast<double>(B);
  est.std_error = std::sqrt(var_sum) / static_cast<double>(B);
  return est;
}

}  // namespace

Mat sample_augmented(const Vec& a, int y, double lambda, const CovTracker& tracker,
                     CovMode view, int M, Rng& rng) {
  if (M < 1) throw std::invalid_argument("sample_augmented: need M >= 1");
  if (lambda < 0.0) throw std::invalid_argument("sample_augmented: lambda must be >= 0");
  const int A = tracker.feature_dim();
  if (static_cast<int>(a.size()) != A) {
    throw std::invalid_argument("sample_augmented: feature dim mismatch");
  }
  Mat S = tracker.covariance(y, view);
  for (auto& v : S.d) v *= lambda;
  const Mat L = psd_factor(S, default_jitter(S));

  const uint64_t base = rng.next_u64();
  Mat out(M, A);
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    Rng draw_rng = draw_stream(base, 0, uint64_t(m));
    Vec eps(A);
    draw_rng.fill_normal(eps.data(), A);
    double* row = out.row(m);
    for (int r = 0; r < A; ++r) row[r] = a[r] + dot(L.row(r), eps.data(), r + 1);
  }
  return out;
}

double explicit_loss(const LabeledBatch& batch, const ClassifierHead& head,
                     const CovTracker& tracker, CovMode view, double lambda, int M, Rng& rng) {
  std::vector<int> cov_class = batch.labels;
  McEstimate est =
      mc_engine(batch.features, cov_class, nullptr, &batch.labels, head, tracker, view, lambda,
                M, rng);
  return est.estimate;
}

McEstimate mc_expected_ce(const LabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, CovMode view, double lambda, int M,
                          Rng& rng) {
  if (M < 2) throw std::invalid_argument("mc_expected_ce: need M >= 2 for a standard error");
  std::vector<int> cov_class = batch.labels;
  return mc_engine(batch.features, cov_class, nullptr, &batch.labels, head, tracker, view,
                   lambda, M, rng);
}

McEstimate mc_expected_kl(const UnlabeledBatch& batch, const ClassifierHead& head,
                          const CovTracker& tracker, CovMode view, double lambda, int M,
                          Rng& rng) {
  if (M < 2) throw std::invalid_argument("mc_expected_kl: need M >= 2 for a standard error");
  const std::vector<int> pseudo = pseudo_labels(batch.probs);
  return mc_engine(batch.features, pseudo, &batch.probs, nullptr, head, tracker, view, lambda,
                   M, rng);
}

}  // namespace isda
