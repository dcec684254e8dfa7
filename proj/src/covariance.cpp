#include "isda/covariance.hpp"

#include "isda/wire.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace isda {

const char* cov_mode_name(CovMode mode) {
  switch (mode) {
    case CovMode::Full: return "full";
    case CovMode::Diagonal: return "diagonal";
    case CovMode::Identity: return "identity";
    case CovMode::Shared: return "shared";
  }
  return "?";
}

CovMode cov_mode_from_name(const std::string& name) {
  if (name == "full") return CovMode::Full;
  if (name == "diagonal") return CovMode::Diagonal;
  if (name == "identity") return CovMode::Identity;
  if (name == "shared") return CovMode::Shared;
  throw std::invalid_argument("unknown covariance mode: " + name);
}

CovTracker::CovTracker(int num_classes, int feature_dim, CovMode mode)
    : num_classes_(num_classes), feature_dim_(feature_dim), mode_(mode) {
  if (num_classes < 2) throw std::invalid_argument("CovTracker: need at least 2 classes");
  if (feature_dim < 1) throw std::invalid_argument("CovTracker: need feature_dim >= 1");
  stats_.resize(num_classes);
  for (auto& s : stats_) s.mean.assign(feature_dim, 0.0);
  switch (mode) {
    case CovMode::Full:
      covs_.assign(num_classes, Mat(feature_dim, feature_dim, 0.0));
      break;
    case CovMode::Diagonal:
      diags_.assign(num_classes, Vec(feature_dim, 0.0));
      break;
    case CovMode::Identity:
      break;
    case CovMode::Shared:
      pooled_scatter_ = Mat(feature_dim, feature_dim, 0.0);
      break;
  }
}

void CovTracker::check_class(int class_id) const {
  if (class_id < 0 || class_id >= num_classes_) {
    throw std::invalid_argument("CovTracker: class id out of range");
  }
}

int64_t CovTracker::count(int class_id) const {
  check_class(class_id);
  return stats_[class_id].count;
}

const Vec& CovTracker::mean(int class_id) const {
  check_class(class_id);
  return stats_[class_id].mean;
}

void CovTracker::update(const Mat& features, const std::vector<int>& labels) {
  const int B = features.rows;
  const int A = feature_dim_;
  if (B < 1) throw std::invalid_argument("CovTracker::update: empty batch");
  if (features.cols != A) throw std::invalid_argument("CovTracker::update: feature dim mismatch");
  if (static_cast<int>(labels.size()) != B) {
    throw std::invalid_argument("CovTracker::update: label count mismatch");
  }
  // Validate everything before touching any state.
  for (int i = 0; i < B; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes_) {
      throw std::invalid_argument("CovTracker::update: label out of range at sample " +
                                  std::to_string(i));
    }
  }
  if (!all_finite(features)) {
    throw std::invalid_argument("CovTracker::update: non-finite feature; batch rejected");
  }

  // Group sample indices by class, preserving batch order.
  std::vector<std::vector<int>> members(num_classes_);
  for (int i = 0; i < B; ++i) members[labels[i]].push_back(i);
  std::vector<int> present;
  for (int j = 0; j < num_classes_; ++j) {
    if (!members[j].empty()) present.push_back(j);
  }

  const int P = static_cast<int>(present.size());
  std::vector<Vec> batch_means(P, Vec(A, 0.0));
  for (int p = 0; p < P; ++p) {
    const auto& idx = members[present[p]];
    Vec& mu = batch_means[p];
    for (int i : idx) axpy(1.0, features.row(i), mu.data(), A);
    for (int a = 0; a < A; ++a) mu[a] /= static_cast<double>(idx.size());
  }

  // Merge per class: mean first needs the old mean, so covariance goes first.
  for (int p = 0; p < P; ++p) {
    const int j = present[p];
    const auto& idx = members[j];
    const double m = static_cast<double>(idx.size());
    const double n = static_cast<double>(stats_[j].count);
    const double denom = n + m;
    const Vec& mu_batch = batch_means[p];
    const Vec& mu_old = stats_[j].mean;

    if (mode_ == CovMode::Full || mode_ == CovMode::Shared) {
      Mat* target = (mode_ == CovMode::Full) ? &covs_[j] : &pooled_scatter_;
      // Batch-local population covariance plus the rank-adjustment cross
      // term, accumulated row-parallel so the result does not depend on
      // the thread count.
#pragma omp parallel for schedule(static)
      for (int r = 0; r < A; ++r) {
        Vec srow(A, 0.0);
        for (int i : idx) {
          const double* x = features.row(i);
          const double cr = x[r] - mu_batch[r];
          for (int c = 0; c < A; ++c) srow[c] += cr * (x[c] - mu_batch[c]);
        }
        const double dr = mu_old[r] - mu_batch[r];
        if (mode_ == CovMode::Full) {
          double* trow = target->row(r);
          for (int c = 0; c < A; ++c) {
            const double sigma_batch = srow[c] / m;
            const double cross = (n * m * dr * (mu_old[c] - mu_batch[c])) / (denom * denom);
            trow[c] = (n * trow[c] + m * sigma_batch) / denom + cross;
          }
        } else {
          // Pooled scatter: sum over classes of n_j * Sigma_j. The per-class
          // increment is m*Sigma' + (n*m/(n+m)) * (mu - mu')(mu - mu')^T.
          double* trow = target->row(r);
          for (int c = 0; c < A; ++c) {
            trow[c] += srow[c] + (n * m / denom) * dr * (mu_old[c] - mu_batch[c]);
          }
        }
      }
    } else if (mode_ == CovMode::Diagonal) {
      Vec& diag = diags_[j];
#pragma omp parallel for schedule(static)
      for (int a = 0; a < A; ++a) {
        double s = 0.0;
        for (int i : idx) {
          const double c = features(i, a) - mu_batch[a];
          s += c * c;
        }
        const double dr = mu_old[a] - mu_batch[a];
        const double sigma_batch = s / m;
        const double cross = (n * m * dr * dr) / (denom * denom);
        diag[a] = (n * diag[a] + m * sigma_batch) / denom + cross;
      }
    }

    for (int a = 0; a < A; ++a) {
      stats_[j].mean[a] = (n * mu_old[a] + m * mu_batch[a]) / denom;
    }
    stats_[j].count += static_cast<int64_t>(idx.size());
    if (mode_ == CovMode::Shared) pooled_count_ += static_cast<int64_t>(idx.size());
  }
  total_count_ += B;
}

bool CovTracker::supports(CovMode view) const {
  if (view == CovMode::Identity) return true;
  switch (mode_) {
    case CovMode::Full: return true;  // everything derivable from full state
    case CovMode::Diagonal: return view == CovMode::Diagonal;
    case CovMode::Identity: return false;
    case CovMode::Shared: return view == CovMode::Shared;
  }
  return false;
}

void CovTracker::apply_cov(int class_id, CovMode view, const double* v, double* out) const {
  check_class(class_id);
  const int A = feature_dim_;
  switch (view) {
    case CovMode::Identity:
      std::memcpy(out, v, sizeof(double) * A);
      return;
    case CovMode::Diagonal: {
      if (mode_ == CovMode::Diagonal) {
        const Vec& diag = diags_[class_id];
        for (int a = 0; a < A; ++a) out[a] = diag[a] * v[a];
      } else if (mode_ == CovMode::Full) {
        const Mat& S = covs_[class_id];
        for (int a = 0; a < A; ++a) out[a] = S(a, a) * v[a];
      } else {
        throw std::invalid_argument("CovTracker: diagonal view unsupported by this storage");
      }
      return;
    }
    case CovMode::Full: {
      if (mode_ != CovMode::Full) {
        throw std::invalid_argument("CovTracker: full view unsupported by this storage");
      }
      const Mat& S = covs_[class_id];
      for (int r = 0; r < A; ++r) out[r] = dot(S.row(r), v, A);
      return;
    }
    case CovMode::Shared: {
      if (mode_ == CovMode::Shared) {
        if (pooled_count_ == 0) {
          std::memset(out, 0, sizeof(double) * A);
          return;
        }
        const double inv = 1.0 / static_cast<double>(pooled_count_);
        for (int r = 0; r < A; ++r) out[r] = inv * dot(pooled_scatter_.row(r), v, A);
      } else if (mode_ == CovMode::Full) {
        // Pooled covariance = sum_j (n_j / n) Sigma_j.
        std::memset(out, 0, sizeof(double) * A);
        if (total_count_ == 0) return;
        Vec tmp(A);
        for (int j = 0; j < num_classes_; ++j) {
          if (stats_[j].count == 0) continue;
          const double w = static_cast<double>(stats_[j].count) /
                           static_cast<double>(total_count_);
          const Mat& S = covs_[j];
          for (int r = 0; r < A; ++r) tmp[r] = dot(S.row(r), v, A);
          axpy(w, tmp.data(), out, A);
        }
      } else {
        throw std::invalid_argument("CovTracker: shared view unsupported by this storage");
      }
      return;
    }
  }
}

Mat CovTracker::covariance(int class_id, CovMode view) const {
  check_class(class_id);
  const int A = feature_dim_;
  Mat out(A, A, 0.0);
  switch (view) {
    case CovMode::Identity:
      for (int a = 0; a < A; ++a) out(a, a) = 1.0;
      return out;
    case CovMode::Diagonal: {
      if (mode_ == CovMode::Diagonal) {
        for (int a = 0; a < A; ++a) out(a, a) = diags_[class_id][a];
      } else if (mode_ == CovMode::Full) {
        for (int a = 0; a < A; ++a) out(a, a) = covs_[class_id](a, a);
      } else {
        throw std::invalid_argument("CovTracker: diagonal view unsupported by this storage");
      }
      return out;
    }
    case CovMode::Full:
      if (mode_ != CovMode::Full) {
        throw std::invalid_argument("CovTracker: full view unsupported by this storage");
      }
      return covs_[class_id];
    case CovMode::Shared: {
      if (mode_ == CovMode::Shared) {
        if (pooled_count_ == 0) return out;
        const double inv = 1.0 / static_cast<double>(pooled_count_);
        for (int r = 0; r < A; ++r) {
          for (int c = 0; c < A; ++c) out(r, c) = inv * pooled_scatter_(r, c);
        }
      } else if (mode_ == CovMode::Full) {
        if (total_count_ == 0) return out;
        for (int j = 0; j < num_classes_; ++j) {
          if (stats_[j].count == 0) continue;
          const double w = static_cast<double>(stats_[j].count) /
                           static_cast<double>(total_count_);
          for (size_t k = 0; k < out.d.size(); ++k) out.d[k] += w * covs_[j].d[k];
        }
      } else {
        throw std::invalid_argument("CovTracker: shared view unsupported by this storage");
      }
      return out;
    }
  }
  return out;
}

size_t CovTracker::second_moment_doubles() const {
  size_t n = 0;
  for (const auto& m : covs_) n += m.size();
  for (const auto& v : diags_) n += v.size();
  n += pooled_scatter_.size();
  return n;
}

// ---------------------------------------------------------------------------
// Snapshot I/O. Everything little-endian; counts stored as f64 (exact
// for any count this library can reach).

namespace {
constexpr char kMagic[4] = {'I', 'S', 'D', 'A'};
constexpr uint16_t kVersion = 1;
}  // namespace

std::string CovTracker::serialize() const {
  std::string buf;
  buf.append(kMagic, 4);
  wire::put_u16(buf, kVersion);
  wire::put_u32(buf, static_cast<uint32_t>(num_classes_));
  wire::put_u32(buf, static_cast<uint32_t>(feature_dim_));
  wire::put_u8(buf, static_cast<uint8_t>(mode_));
  for (int j = 0; j < num_classes_; ++j) {
    wire::put_f64(buf, static_cast<double>(stats_[j].count));
    for (double v : stats_[j].mean) wire::put_f64(buf, v);
    if (mode_ == CovMode::Full) {
      for (double v : covs_[j].d) wire::put_f64(buf, v);
    } else if (mode_ == CovMode::Diagonal) {
      for (double v : diags_[j]) wire::put_f64(buf, v);
    }
  }
  if (mode_ == CovMode::Shared) {
    wire::put_f64(buf, static_cast<double>(pooled_count_));
    for (double v : pooled_scatter_.d) wire::put_f64(buf, v);
  }
  return buf;
}

CovTracker CovTracker::deserialize(const std::string& buf) {
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw std::runtime_error("tracker snapshot: bad magic");
  }
  wire::Reader r(buf, 4);
  const uint16_t version = r.u16();
  if (version != kVersion) {
    throw std::runtime_error("tracker snapshot: unsupported version " + std::to_string(version));
  }
  const int C = static_cast<int>(r.u32());
  const int A = static_cast<int>(r.u32());
  const uint8_t mode_tag = r.u8();
  if (mode_tag > 3) throw std::runtime_error("tracker snapshot: bad mode tag");

  CovTracker t(C, A, static_cast<CovMode>(mode_tag));
  int64_t total = 0;
  for (int j = 0; j < C; ++j) {
    t.stats_[j].count = static_cast<int64_t>(r.f64());
    total += t.stats_[j].count;
    for (int a = 0; a < A; ++a) t.stats_[j].mean[a] = r.f64();
    if (t.mode_ == CovMode::Full) {
      for (auto& v : t.covs_[j].d) v = r.f64();
    } else if (t.mode_ == CovMode::Diagonal) {
      for (auto& v : t.diags_[j]) v = r.f64();
    }
  }
  if (t.mode_ == CovMode::Shared) {
    t.pooled_count_ = static_cast<int64_t>(r.f64());
    for (auto& v : t.pooled_scatter_.d) v = r.f64();
  }
  t.total_count_ = total;
  if (r.left != 0) throw std::runtime_error("tracker snapshot: trailing bytes");
  return t;
}

void CovTracker::save(const std::string& path) const { wire::write_file(path, serialize()); }

CovTracker CovTracker::load(const std::string& path) {
  return deserialize(wire::read_file(path));
}

bool CovTracker::operator==(const CovTracker& o) const {
  if (num_classes_ != o.num_classes_ || feature_dim_ != o.feature_dim_ || mode_ != o.mode_ ||
      total_count_ != o.total_count_ || pooled_count_ != o.pooled_count_) {
    return false;
  }
  for (int j = 0; j < num_classes_; ++j) {
    if (stats_[j].count != o.stats_[j].count) return false;
    if (stats_[j].mean != o.stats_[j].mean) return false;
  }
  for (size_t i = 0; i < covs_.size(); ++i) {
    if (covs_[i].d != o.covs_[i].d) return false;
  }
  for (size_t i = 0; i < diags_.size(); ++i) {
    if (diags_[i] != o.diags_[i]) return false;
  }
  return pooled_scatter_.d == o.pooled_scatter_.d;
}

}  // namespace isda
