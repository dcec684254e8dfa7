#pragma once

// Dense kernel shared by the whole library: small row-major matrices,
// a counter-based splittable RNG, stable log-sum-exp, and a jittered
// Cholesky factorization for sampling from estimated covariances.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace isda {

using Vec = std::vector<double>;

// Row-major dense matrix. Shape is carried with the data and checked at
// the entry of every operation that combines two matrices.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), d(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  double& operator()(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
  double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }
  size_t size() const { return d.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Raised when a matrix cannot be factorized even at the maximum jitter.
struct indefinite_matrix_error : std::runtime_error {
  explicit indefinite_matrix_error(const std::string& what) : std::runtime_error(what) {}
};

bool all_finite(const double* p, size_t n);
bool all_finite(const Vec& v);
bool all_finite(const Mat& m);
void require_finite(const Vec& v, const char* name);
void require_finite(const Mat& m, const char* name);

double dot(const double* a, const double* b, int n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, int n);

// Counter-based generator: output k of a stream is a pure function of
// (key, k), so streams can be split per class/sample/draw and replayed
// independently of batch parallelism. Identical seed, identical stream.
struct Rng {
  uint64_t key = 0;
  uint64_t ctr = 0;

  Rng() = default;
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // Uniform in (0, 1]; never returns 0 so it is safe under log().
  double next_uniform();
  // Standard normal via Box-Muller; consumes exactly two counter steps.
  double next_normal();
  void fill_normal(double* out, int n);

  // Derive an independent child stream; the parent is not advanced.
  Rng split(uint64_t stream) const;

  static uint64_t mix(uint64_t z);
};

// log(sum_k exp(z_k)) with max-shift; empty input is a domain error.
double logsumexp(const Vec& z);
double logsumexp(const double* z, int n);

// Lower-triangular L with L*L^T ~= S + jitter*I. S must be symmetric to
// 1e-9 relative max-norm. On pivot failure the jitter is escalated x10,
// at most four times, starting from 1e-8 * trace(S)/A relative scale and
// capped at the 1e-4 relative rung; past that an indefinite_matrix_error
// is thrown. Exactly-zero pivots with a zero column are accepted, so
// rank-deficient PSD inputs (early covariance estimates) factor cleanly.
Mat psd_factor(const Mat& S, double jitter);

// The jitter the sampling paths use by default: 1e-8 * trace(S)/A.
double default_jitter(const Mat& S);

// mean + L * eps with eps iid standard normal drawn from rng.
Vec sample_gaussian(const Vec& mean, const Mat& L, Rng& rng);

}  // namespace isda
