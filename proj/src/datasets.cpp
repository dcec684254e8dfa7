#include "isda/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace isda {

namespace {

Mat cov_from_spec(const ClassCovSpec& spec, int dim, int class_id, uint64_t seed) {
  Mat S(dim, dim, 0.0);
  switch (spec.kind) {
    case ClassCovSpec::Kind::Isotropic:
      for (int i = 0; i < dim; ++i) S(i, i) = spec.sigma * spec.sigma;
      return S;
    case ClassCovSpec::Kind::Diagonal: {
      if (static_cast<int>(spec.diagonal.size()) != dim) {
        throw std::invalid_argument("synthetic: diagonal spec has wrong length");
      }
      for (int i = 0; i < dim; ++i) {
        if (spec.diagonal[i] < 0.0) throw std::invalid_argument("synthetic: negative variance");
        S(i, i) = spec.diagonal[i];
      }
      return S;
    }
    case ClassCovSpec::Kind::Full:
      if (spec.full.rows != dim || spec.full.cols != dim) {
        throw std::invalid_argument("synthetic: full covariance has wrong shape");
      }
      return spec.full;
    case ClassCovSpec::Kind::Anisotropic: {
      // sigma^2 I plus a spike^2 rank-one term along a per-class random
      // unit direction.
      Rng rng = Rng(seed).split(0xA11D0 + class_id);
      Vec u(dim);
      double norm = 0.0;
      while (norm < 1e-12) {
        rng.fill_normal(u.data(), dim);
        norm = std::sqrt(dot(u.data(), u.data(), dim));
      }
      for (auto& v : u) v /= norm;
      for (int r = 0; r < dim; ++r) {
        for (int c = 0; c < dim; ++c) {
          S(r, c) = spec.spike * spec.spike * u[r] * u[c];
        }
        S(r, r) += spec.sigma * spec.sigma;
      }
      return S;
    }
  }
  return S;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec, uint64_t seed) {
  const int C = spec.num_classes;
  const int D = spec.dim;
  if (C < 2) throw std::invalid_argument("synthetic: need at least 2 classes");
  if (D < 1) throw std::invalid_argument("synthetic: need dim >= 1");
  if (C > D) {
    throw std::invalid_argument("synthetic: simplex placement needs num_classes <= dim");
  }
  if (spec.per_class < 1) throw std::invalid_argument("synthetic: need per_class >= 1");
  if (!(spec.cov.size() == 1 || static_cast<int>(spec.cov.size()) == C)) {
    throw std::invalid_argument("synthetic: need one covariance spec, or one per class");
  }

  SyntheticData out;
  out.data.num_classes = C;
  out.data.X = Mat(C * spec.per_class, D);
  out.data.labels.resize(C * spec.per_class);

  for (int c = 0; c < C; ++c) {
    // Centered one-hot corner, scaled: a regular simplex in the first C dims.
    Vec mu(D, 0.0);
    for (int k = 0; k < C; ++k) mu[k] = -spec.mean_scale / C;
    mu[c] += spec.mean_scale;
    out.true_means.push_back(mu);

    const ClassCovSpec& cs = spec.cov.size() == 1 ? spec.cov[0] : spec.cov[c];
    Mat S = cov_from_spec(cs, D, c, seed);
    Mat L;
    try {
      L = psd_factor(S, 0.0);
    } catch (const indefinite_matrix_error&) {
      throw std::invalid_argument("synthetic: covariance spec for class " + std::to_string(c) +
                                  " is not PSD");
    }
    out.true_covs.push_back(std::move(S));

    Rng rng = Rng(seed).split(0x5A17 + c);
    for (int i = 0; i < spec.per_class; ++i) {
      const int row = c * spec.per_class + i;
      const Vec x = sample_gaussian(mu, L, rng);
      std::copy(x.begin(), x.end(), out.data.X.row(row));
      out.data.labels[row] = c;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary records

Dataset load_binary_records(const std::string& path, int height, int width, int channels,
                            int num_classes, bool normalize, const ChannelStats* stats,
                            ChannelStats* out_stats) {
  if (height < 1 || width < 1 || channels < 1) {
    throw std::invalid_argument("load_binary_records: bad geometry");
  }
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("load_binary_records: cannot open " + path);
  std::vector<unsigned char> bytes;
  unsigned char chunk[65536];
  size_t n;
  while ((n = std::fread(chunk, 1, sizeof(chunk), f)) > 0) bytes.insert(bytes.end(), chunk, chunk + n);
  std::fclose(f);

  const size_t pixels = static_cast<size_t>(height) * width * channels;
  const size_t record = 1 + pixels;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw std::runtime_error("load_binary_records: truncated file (size " +
                             std::to_string(bytes.size()) + " not a multiple of " +
                             std::to_string(record) + ")");
  }
  const int N = static_cast<int>(bytes.size() / record);

  Dataset ds;
  ds.num_classes = num_classes;
  ds.X = Mat(N, static_cast<int>(pixels));
  ds.labels.resize(N);
  for (int i = 0; i < N; ++i) {
    const unsigned char* rec = bytes.data() + static_cast<size_t>(i) * record;
    const int label = rec[0];
    if (label >= num_classes) {
      throw std::runtime_error("load_binary_records: label byte " + std::to_string(label) +
                               " >= num_classes at record " + std::to_string(i));
    }
    ds.labels[i] = label;
    double* row = ds.X.row(i);
    for (size_t p = 0; p < pixels; ++p) row[p] = static_cast<double>(rec[1 + p]) / 255.0;
  }

  ChannelStats computed;
  const ChannelStats* use = stats;
  if (normalize || out_stats) {
    if (!stats) {
      computed.mean.assign(channels, 0.0);
      computed.std.assign(channels, 0.0);
      const size_t plane = static_cast<size_t>(height) * width;
      for (int c = 0; c < channels; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < N; ++i) {
          const double* row = ds.X.row(i) + c * plane;
          for (size_t p = 0; p < plane; ++p) {
            sum += row[p];
            sq += row[p] * row[p];
          }
        }
        const double cnt = static_cast<double>(N) * plane;
        computed.mean[c] = sum / cnt;
        const double var = std::max(0.0, sq / cnt - computed.mean[c] * computed.mean[c]);
        computed.std[c] = std::sqrt(var) > 0.0 ? std::sqrt(var) : 1.0;
      }
      use = &computed;
    }
    if (out_stats) *out_stats = *use;
  }
  if (normalize) {
    const size_t plane = static_cast<size_t>(height) * width;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < N; ++i) {
      double* row = ds.X.row(i);
      for (int c = 0; c < channels; ++c) {
        for (size_t p = 0; p < plane; ++p) {
          row[c * plane + p] = (row[c * plane + p] - use->mean[c]) / use->std[c];
        }
      }
    }
  }
  return ds;
}

void export_binary_records(const std::string& path, const Dataset& data, int height, int width,
                           int channels) {
  const size_t pixels = static_cast<size_t>(height) * width * channels;
  if (static_cast<size_t>(data.X.cols) != pixels) {
    throw std::invalid_argument("export_binary_records: geometry does not match dataset dim");
  }
  if (static_cast<int>(data.labels.size()) != data.X.rows) {
    throw std::invalid_argument("export_binary_records: dataset has no labels");
  }
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("export_binary_records: cannot open " + path);
  std::vector<unsigned char> rec(1 + pixels);
  for (int i = 0; i < data.X.rows; ++i) {
    if (data.labels[i] < 0 || data.labels[i] > 255) {
      std::fclose(f);
      throw std::invalid_argument("export_binary_records: label does not fit a byte");
    }
    rec[0] = static_cast<unsigned char>(data.labels[i]);
    const double* row = data.X.row(i);
    for (size_t p = 0; p < pixels; ++p) {
      const double clamped = std::min(1.0, std::max(0.0, row[p]));
      rec[1 + p] = static_cast<unsigned char>(std::lround(clamped * 255.0));
    }
    if (std::fwrite(rec.data(), 1, rec.size(), f) != rec.size()) {
      std::fclose(f);
      throw std::runtime_error("export_binary_records: short write");
    }
  }
  std::fclose(f);
}

// ---------------------------------------------------------------------------
// Semi-supervised split

SemiSplit split_semi(const Dataset& data, int num_labeled, uint64_t seed) {
  const int N = data.size();
  const int C = data.num_classes;
  if (static_cast<int>(data.labels.size()) != N) {
    throw std::invalid_argument("split_semi: dataset has no labels");
  }
  if (num_labeled < C) {
    throw std::invalid_argument("split_semi: num_labeled below the class count, cannot balance");
  }
  if (num_labeled > N) throw std::invalid_argument("split_semi: num_labeled exceeds dataset size");

  std::vector<std::vector<int>> by_class(C);
  for (int i = 0; i < N; ++i) by_class[data.labels[i]].push_back(i);

  // Per-class quota: as equal as possible, lower class ids take the extras.
  std::vector<int> quota(C, num_labeled / C);
  for (int c = 0; c < num_labeled % C; ++c) quota[c] += 1;

  Rng rng(seed);
  std::vector<int> labeled_idx, val_idx, unlabeled_idx;
  for (int c = 0; c < C; ++c) {
    auto& pool = by_class[c];
    if (static_cast<int>(pool.size()) < quota[c]) {
      throw std::invalid_argument("split_semi: class " + std::to_string(c) +
                                  " has too few samples for a balanced pick");
    }
    // Seeded Fisher-Yates on the class pool.
    Rng crng = rng.split(c);
    for (size_t i = pool.size(); i > 1; --i) {
      const size_t j = crng.next_u64() % i;
      std::swap(pool[i - 1], pool[j]);
    }
    const int q = quota[c];
    const int vq = q / 4;  // 25% of the labeled pick held out per class
    for (int i = 0; i < vq; ++i) val_idx.push_back(pool[i]);
    for (int i = vq; i < q; ++i) labeled_idx.push_back(pool[i]);
    for (size_t i = q; i < pool.size(); ++i) unlabeled_idx.push_back(pool[i]);
  }
  std::sort(labeled_idx.begin(), labeled_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(unlabeled_idx.begin(), unlabeled_idx.end());

  auto take = [&](const std::vector<int>& idx, bool keep_labels) {
    Dataset out;
    out.num_classes = C;
    out.X = Mat(static_cast<int>(idx.size()), data.dim());
    if (keep_labels) out.labels.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy(data.X.row(idx[i]), data.X.row(idx[i]) + data.dim(), out.X.row(i));
      if (keep_labels) out.labels[i] = data.labels[idx[i]];
    }
    return out;
  };

  SemiSplit split;
  split.labeled = take(labeled_idx, true);
  split.validation = take(val_idx, true);
  split.unlabeled = take(unlabeled_idx, false);
  return split;
}

}  // namespace isda
