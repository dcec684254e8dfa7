#pragma once

// Streaming per-class feature statistics. Each mini-batch is folded into
// the running (count, mean, covariance) triple with the exact pooling
// merge, so the final statistics equal the one-shot population statistics
// of everything seen, independent of how the stream was batched.
//
// Batch-local covariances use the population convention (divide by m).
// The merge is an identity only under that convention; with /(m-1) it is
// not, so sample-covariance inputs are deliberately not supported.

#include <cstdint>
#include <string>
#include <vector>

#include "isda/numeric.hpp"

namespace isda {

enum class CovMode : uint8_t { Full = 0, Diagonal = 1, Identity = 2, Shared = 3 };

const char* cov_mode_name(CovMode mode);
CovMode cov_mode_from_name(const std::string& name);

struct ClassStats {
  int64_t count = 0;
  Vec mean;  // length A, zero while count == 0
};

class CovTracker {
 public:
  CovTracker() = default;
  // C >= 2 classes, A >= 1 feature dims. Storage follows the mode:
  // Full keeps C full matrices, Diagonal keeps C diagonals (O(C*A)),
  // Shared keeps one pooled matrix plus per-class means, Identity keeps
  // second moments not at all.
  CovTracker(int num_classes, int feature_dim, CovMode mode);

  int num_classes() const { return num_classes_; }
  int feature_dim() const { return feature_dim_; }
  CovMode mode() const { return mode_; }

  // Folds a B x A feature batch with integer labels into the statistics.
  // A NaN/Inf feature or an out-of-range label rejects the whole batch and
  // leaves the tracker untouched.
  void update(const Mat& features, const std::vector<int>& labels);

  int64_t count(int class_id) const;
  const Vec& mean(int class_id) const;
  int64_t total_count() const { return total_count_; }

  // Materialized A x A covariance view for the given class under the
  // requested mode. Full -> Sigma_j; Diagonal -> diag(Sigma_j);
  // Identity -> I; Shared -> pooled covariance of all features about
  // their own class means. The view must be supported by the storage
  // chosen at construction (see supports()).
  Mat covariance(int class_id, CovMode view) const;
  Mat covariance(int class_id) const { return covariance(class_id, mode_); }

  // out = Sigma_view * v without materializing the matrix. O(A^2) for
  // Full/Shared views, O(A) for Diagonal/Identity. This is the loss-side
  // work the complexity accounting counts as A^2 per class.
  void apply_cov(int class_id, CovMode view, const double* v, double* out) const;

  bool supports(CovMode view) const;

  // Number of doubles held for second moments (memory accounting).
  size_t second_moment_doubles() const;

  // Versioned little-endian snapshot: magic "ISDA", u16 version, C, A,
  // mode tag, then per-class count/mean/cov payload as f64.
  void save(const std::string& path) const;
  static CovTracker load(const std::string& path);
  std::string serialize() const;
  static CovTracker deserialize(const std::string& buf);

  bool operator==(const CovTracker& o) const;

 private:
  void check_class(int class_id) const;

  int num_classes_ = 0;
  int feature_dim_ = 0;
  CovMode mode_ = CovMode::Full;
  int64_t total_count_ = 0;

  std::vector<ClassStats> stats_;
  std::vector<Mat> covs_;    // Full: per-class A x A
  std::vector<Vec> diags_;   // Diagonal: per-class length A
  int64_t pooled_count_ = 0; // Shared
  Mat pooled_scatter_;       // Shared: sum of within-class scatters, A x A
};

}  // namespace isda
