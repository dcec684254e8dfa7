#include "isda/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace isda {

bool all_finite(const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

bool all_finite(const Vec& v) { return all_finite(v.data(), v.size()); }
bool all_finite(const Mat& m) { return all_finite(m.d.data(), m.d.size()); }

void require_finite(const Vec& v, const char* name) {
  if (!all_finite(v)) throw std::invalid_argument(std::string(name) + ": non-finite entry");
}

void require_finite(const Mat& m, const char* name) {
  if (!all_finite(m)) throw std::invalid_argument(std::string(name) + ": non-finite entry");
}

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// ---------------------------------------------------------------------------
// Rng

namespace {
constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}

uint64_t Rng::mix(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Rng::Rng(uint64_t seed) : key(mix(seed ^ 0x5851F42D4C957F2Dull)), ctr(0) {}

uint64_t Rng::next_u64() {
  ctr += 1;
  return mix(key + ctr * kGolden);
}

double Rng::next_uniform() {
  // 53-bit mantissa, shifted into (0, 1].
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::next_normal() {
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

void Rng::fill_normal(double* out, int n) {
  for (int i = 0; i < n; ++i) out[i] = next_normal();
}

Rng Rng::split(uint64_t stream) const {
  Rng child;
  child.key = mix(mix(key ^ 0xD1B54A32D192ED03ull) + stream * kGolden);
  child.ctr = 0;
  return child;
}

// ---------------------------------------------------------------------------
// logsumexp

double logsumexp(const double* z, int n) {
  if (n <= 0) throw std::invalid_argument("logsumexp: empty input");
  double m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  if (!std::isfinite(m)) {
    if (std::isnan(m)) throw std::invalid_argument("logsumexp: non-finite input");
    // All entries -inf, or a +inf present; shift formula still applies.
  }
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(z[i] - m);
  return m + std::log(s);
}

double logsumexp(const Vec& z) { return logsumexp(z.data(), static_cast<int>(z.size())); }

// ---------------------------------------------------------------------------
// psd_factor

namespace {

// One Cholesky attempt on S + jitter*I. Zero pivots are accepted when the
// remainder of their column is also (numerically) zero, which is the case
// for rank-deficient PSD matrices. Returns false on a genuine pivot failure.
bool cholesky_attempt(const Mat& S, double jitter, Mat& L) {
  const int n = S.rows;
  L = Mat(n, n, 0.0);
  double scale = jitter;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(S(i, i)));
  const double pivot_tol = 1e-13 * scale;
  const double col_tol = 1e-10 * scale;

  for (int j = 0; j < n; ++j) {
    double d = S(j, j) + jitter - dot(L.row(j), L.row(j), j);
    if (d > pivot_tol) {
      const double ljj = std::sqrt(d);
      L(j, j) = ljj;
      for (int i = j + 1; i < n; ++i) {
        L(i, j) = (S(i, j) - dot(L.row(i), L.row(j), j)) / ljj;
      }
    } else if (d >= -pivot_tol) {
      // Semi-definite direction: pivot ~ 0 is fine only if the column
      // below carries no mass either.
      L(j, j) = 0.0;
      for (int i = j + 1; i < n; ++i) {
        const double off = S(i, j) - dot(L.row(i), L.row(j), j);
        if (std::abs(off) > col_tol) return false;
        L(i, j) = 0.0;
      }
    } else {
      return false;
    }
  }
  return true;
}

}  // namespace

double default_jitter(const Mat& S) {
  double tr = 0.0;
  for (int i = 0; i < S.rows; ++i) tr += S(i, i);
  return 1e-8 * tr / std::max(1, S.rows);
}

Mat psd_factor(const Mat& S, double jitter) {
  if (S.rows != S.cols) throw std::invalid_argument("psd_factor: matrix not square");
  if (jitter < 0.0) throw std::invalid_argument("psd_factor: negative jitter");
  require_finite(S, "psd_factor: S");

  double max_abs = 0.0, max_asym = 0.0;
  for (int i = 0; i < S.rows; ++i) {
    for (int j = 0; j < S.cols; ++j) {
      max_abs = std::max(max_abs, std::abs(S(i, j)));
      max_asym = std::max(max_asym, std::abs(S(i, j) - S(j, i)));
    }
  }
  if (max_asym > 1e-9 * max_abs) {
    throw std::invalid_argument("psd_factor: matrix not symmetric");
  }

  Mat L;
  if (cholesky_attempt(S, jitter, L)) return L;

  // Escalate from the default relative rung, never below what was asked for.
  double tr = 0.0;
  for (int i = 0; i < S.rows; ++i) tr += S(i, i);
  const double rel = std::abs(tr) / std::max(1, S.rows);
  double j = std::max(jitter, 1e-8 * rel);
  for (int attempt = 0; attempt < 4; ++attempt) {
    j *= 10.0;
    if (cholesky_attempt(S, j, L)) return L;
  }
  throw indefinite_matrix_error("psd_factor: pivot failure at maximum jitter " +
                                std::to_string(j));
}

Vec sample_gaussian(const Vec& mean, const Mat& L, Rng& rng) {
  const int n = static_cast<int>(mean.size());
  if (L.rows != n || L.cols != n) {
    throw std::invalid_argument("sample_gaussian: shape mismatch between mean and L");
  }
  Vec eps(n);
  rng.fill_normal(eps.data(), n);
  Vec out(mean);
  for (int i = 0; i < n; ++i) {
    // L is lower-triangular; only the first i+1 entries of row i matter.
    out[i] += dot(L.row(i), eps.data(), i + 1);
  }
  return out;
}

}  // namespace isda
