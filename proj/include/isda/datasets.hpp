#pragma once

// Data provisioning: a synthetic Gaussian-class generator with known
// ground-truth covariances, a loader for label-byte + channel-planar-pixel
// binary records, and the class-balanced labeled/unlabeled/validation split
// used by the semi-supervised runs.

#include <cstdint>
#include <string>
#include <vector>

#include "isda/numeric.hpp"

namespace isda {

struct Dataset {
  Mat X;                    // N x D
  std::vector<int> labels;  // length N; empty when the set is unlabeled
  int num_classes = 0;

  int size() const { return X.rows; }
  int dim() const { return X.cols; }
};

// Per-class covariance specification for the synthetic generator.
struct ClassCovSpec {
  enum class Kind { Isotropic, Diagonal, Full, Anisotropic };
  Kind kind = Kind::Isotropic;
  double sigma = 1.0;       // Isotropic / Anisotropic base scale
  Vec diagonal;             // Diagonal
  Mat full;                 // Full (must be PSD)
  double spike = 0.0;       // Anisotropic: extra std along a random unit direction
};

struct SyntheticSpec {
  int num_classes = 2;
  int dim = 2;
  int per_class = 100;
  double mean_scale = 2.0;             // class means on a scaled simplex
  std::vector<ClassCovSpec> cov;       // one entry, or one per class
};

struct SyntheticData {
  Dataset data;
  std::vector<Vec> true_means;  // C x D
  std::vector<Mat> true_covs;   // C x (D x D)
};

// Samples per_class points from N(mu_c, Sigma_c) for each class, class
// means placed on a scaled simplex. The ground truth is retained so
// tracker estimates can be checked against it.
SyntheticData generate_synthetic(const SyntheticSpec& spec, uint64_t seed);

// Channel statistics used for normalization, computed from a training
// split and reused for its test split.
struct ChannelStats {
  Vec mean;  // one per channel
  Vec std;
};

// Records of 1 label byte + H*W*K pixel bytes (channel-planar, row-major).
// Pixels land in [0,1]; when normalize is true each channel is shifted and
// scaled by the dataset statistics (computed from this file when stats is
// null). Record order is preserved.
Dataset load_binary_records(const std::string& path, int height, int width, int channels,
                            int num_classes, bool normalize = true,
                            const ChannelStats* stats = nullptr,
                            ChannelStats* out_stats = nullptr);

// Writes a dataset whose values live in [0,1] back to the record format,
// quantizing to bytes with round-half-away-from-zero.
void export_binary_records(const std::string& path, const Dataset& data, int height, int width,
                           int channels);

struct SemiSplit {
  Dataset labeled;     // class-balanced, labels kept (75% of the labeled pick)
  Dataset validation;  // the held-out 25% of the labeled pick, labels kept
  Dataset unlabeled;   // the remainder, labels stripped
};

// Class-balanced labeled subset of num_labeled samples (per-class counts
// differ by at most one), 25% of it held out for validation, everything
// else unlabeled. Deterministic per seed.
SemiSplit split_semi(const Dataset& data, int num_labeled, uint64_t seed);

}  // namespace isda
