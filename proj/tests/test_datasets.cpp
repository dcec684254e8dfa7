#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "isda/covariance.hpp"
#include "isda/datasets.hpp"
#include "isda/wire.hpp"

using namespace isda;

namespace {

double frob(const Mat& m) {
  double s = 0.0;
  for (double v : m.d) s += v * v;
  return std::sqrt(s);
}

double frob_diff(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.d.size(); ++i) s += (a.d[i] - b.d[i]) * (a.d[i] - b.d[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("point classes separate and track to zero covariance") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.dim = 4;
  spec.per_class = 20;
  spec.mean_scale = 2.0;
  ClassCovSpec cov;
  cov.kind = ClassCovSpec::Kind::Isotropic;
  cov.sigma = 0.0;
  spec.cov.push_back(cov);
  const SyntheticData d = generate_synthetic(spec, 5);

  CovTracker t(3, 4, CovMode::Full);
  t.update(d.data.X, d.data.labels);
  for (int c = 0; c < 3; ++c) {
    CHECK(frob(t.covariance(c, CovMode::Full)) < 1e-15);  // roundoff dust only
    for (int a = 0; a < 4; ++a) {
      CHECK(t.mean(c)[a] == doctest::Approx(d.true_means[c][a]).epsilon(1e-12));
    }
  }
}

TEST_CASE("tracker estimate converges to the generator truth") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 4;
  spec.per_class = 10000;
  spec.mean_scale = 1.0;
  ClassCovSpec cov;
  cov.kind = ClassCovSpec::Kind::Isotropic;
  cov.sigma = 0.7;
  spec.cov.push_back(cov);
  const SyntheticData d = generate_synthetic(spec, 9);

  CovTracker t(2, 4, CovMode::Full);
  t.update(d.data.X, d.data.labels);
  for (int c = 0; c < 2; ++c) {
    const Mat est = t.covariance(c, CovMode::Full);
    CHECK(frob_diff(est, d.true_covs[c]) < 0.05 * frob(d.true_covs[c]));
  }

  // Error shrinks with n at roughly 1/sqrt(n).
  SyntheticSpec small = spec;
  small.per_class = 100;
  const SyntheticData ds = generate_synthetic(small, 9);
  CovTracker ts(2, 4, CovMode::Full);
  ts.update(ds.data.X, ds.data.labels);
  const double err_small = frob_diff(ts.covariance(0, CovMode::Full), d.true_covs[0]);
  const double err_big = frob_diff(t.covariance(0, CovMode::Full), d.true_covs[0]);
  CHECK(err_big < err_small);
}

TEST_CASE("dominant eigendirection is recovered") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 4;
  spec.per_class = 10000;
  spec.mean_scale = 1.0;
  ClassCovSpec cov;
  cov.kind = ClassCovSpec::Kind::Anisotropic;
  cov.sigma = 0.2;
  cov.spike = 1.5;
  spec.cov.push_back(cov);
  const SyntheticData d = generate_synthetic(spec, 13);

  CovTracker t(2, 4, CovMode::Full);
  t.update(d.data.X, d.data.labels);

  for (int c = 0; c < 2; ++c) {
    // True dominant direction: the spike eigenvector of the true cov.
    // Power iteration on both matrices.
    auto top_eigvec = [](const Mat& S) {
      Vec v(S.rows, 1.0);
      for (int it = 0; it < 200; ++it) {
        Vec next(S.rows, 0.0);
        for (int r = 0; r < S.rows; ++r) next[r] = dot(S.row(r), v.data(), S.rows);
        double norm = std::sqrt(dot(next.data(), next.data(), S.rows));
        for (auto& x : next) x /= norm;
        v = next;
      }
      return v;
    };
    const Vec u_true = top_eigvec(d.true_covs[c]);
    const Vec u_est = top_eigvec(t.covariance(c, CovMode::Full));
    const double cosine = std::abs(dot(u_true.data(), u_est.data(), 4));
    CHECK(cosine > 0.95);
  }
}

TEST_CASE("binary records: fixture round-trip and independent decoder") {
  // Handcrafted two-record file: 2x2 single-channel.
  const std::string path = "/tmp/isda_records_test.bin";
  const unsigned char payload[] = {
      1, 0, 64, 128, 255,  // label 1, pixels 0, 64, 128, 255
      0, 10, 20, 30, 40,   // label 0
  };
  wire::write_file(path, std::string(reinterpret_cast<const char*>(payload), sizeof(payload)));

  const Dataset raw = load_binary_records(path, 2, 2, 1, 2, /*normalize=*/false);
  CHECK(raw.size() == 2);
  CHECK(raw.labels == std::vector<int>{1, 0});
  CHECK(raw.X(0, 0) == 0.0);
  CHECK(raw.X(0, 3) == 1.0);
  CHECK(raw.X(1, 2) == doctest::Approx(30.0 / 255.0).epsilon(1e-15));

  // Independent decoder: parse the raw bytes directly.
  const std::string bytes = wire::read_file(path);
  for (int rec = 0; rec < 2; ++rec) {
    for (int p = 0; p < 4; ++p) {
      const double expected =
          static_cast<double>(static_cast<unsigned char>(bytes[rec * 5 + 1 + p])) / 255.0;
      CHECK(raw.X(rec, p) == expected);
    }
  }

  // Loads are bit-identical.
  const Dataset again = load_binary_records(path, 2, 2, 1, 2, false);
  CHECK(again.X.d == raw.X.d);

  // Normalization: all-zero pixels map to -mean/std per channel.
  const std::string zpath = "/tmp/isda_records_zero.bin";
  const unsigned char zero_payload[] = {0, 0, 0, 0, 0, 1, 255, 255, 255, 255};
  wire::write_file(zpath,
                   std::string(reinterpret_cast<const char*>(zero_payload), sizeof(zero_payload)));
  ChannelStats stats;
  const Dataset norm = load_binary_records(zpath, 2, 2, 1, 2, true, nullptr, &stats);
  CHECK(norm.X(0, 0) == doctest::Approx(-stats.mean[0] / stats.std[0]).epsilon(1e-12));

  // Truncated file and out-of-range label byte are rejected.
  wire::write_file(path, std::string(reinterpret_cast<const char*>(payload), 7));
  CHECK_THROWS(load_binary_records(path, 2, 2, 1, 2, false));
  const unsigned char bad_label[] = {9, 1, 2, 3, 4};
  wire::write_file(path,
                   std::string(reinterpret_cast<const char*>(bad_label), sizeof(bad_label)));
  CHECK_THROWS(load_binary_records(path, 2, 2, 1, 2, false));
  std::remove(path.c_str());
  std::remove(zpath.c_str());
}

TEST_CASE("synthetic data exports to records and loads back quantized") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 9;  // 3x3 single channel
  spec.per_class = 8;
  spec.mean_scale = 0.4;
  ClassCovSpec cov;
  cov.kind = ClassCovSpec::Kind::Isotropic;
  cov.sigma = 0.1;
  spec.cov.push_back(cov);
  SyntheticData d = generate_synthetic(spec, 17);
  // Shift into [0,1] before export.
  for (auto& v : d.data.X.d) v = std::min(1.0, std::max(0.0, 0.5 + 0.25 * v));

  const std::string path = "/tmp/isda_export_test.bin";
  export_binary_records(path, d.data, 3, 3, 1);
  const Dataset back = load_binary_records(path, 3, 3, 1, 2, false);
  CHECK(back.size() == d.data.size());
  CHECK(back.labels == d.data.labels);
  for (size_t k = 0; k < d.data.X.d.size(); ++k) {
    const double quantized = std::lround(d.data.X.d[k] * 255.0) / 255.0;
    CHECK(back.X.d[k] == doctest::Approx(quantized).epsilon(1e-15));
  }
  std::remove(path.c_str());
}

TEST_CASE("semi split is balanced, disjoint and deterministic") {
  SyntheticSpec spec;
  spec.num_classes = 10;
  spec.dim = 10;
  spec.per_class = 200;
  spec.mean_scale = 1.0;
  ClassCovSpec cov;
  cov.kind = ClassCovSpec::Kind::Isotropic;
  cov.sigma = 1.0;
  spec.cov.push_back(cov);
  const SyntheticData d = generate_synthetic(spec, 19);

  const SemiSplit split = split_semi(d.data, 1000, 3);
  CHECK(split.validation.size() == 250);  // 25 per class
  CHECK(split.labeled.size() == 750);
  CHECK(split.unlabeled.size() == 2000 - 1000);
  CHECK(split.unlabeled.labels.empty());  // stripped

  // Exactly 100 per class across labeled + validation.
  std::vector<int> counts(10, 0);
  for (int y : split.labeled.labels) counts[y] += 1;
  for (int y : split.validation.labels) counts[y] += 1;
  for (int c = 0; c < 10; ++c) CHECK(counts[c] == 100);

  // Disjointness and full coverage via coordinate fingerprints.
  auto key = [&](const Mat& X, int i) {
    return std::make_pair(X(i, 0), X(i, 1));
  };
  std::set<std::pair<double, double>> seen;
  for (int i = 0; i < split.labeled.size(); ++i) CHECK(seen.insert(key(split.labeled.X, i)).second);
  for (int i = 0; i < split.validation.size(); ++i) {
    CHECK(seen.insert(key(split.validation.X, i)).second);
  }
  for (int i = 0; i < split.unlabeled.size(); ++i) {
    CHECK(seen.insert(key(split.unlabeled.X, i)).second);
  }
  CHECK(static_cast<int>(seen.size()) == d.data.size());

  const SemiSplit split2 = split_semi(d.data, 1000, 3);
  CHECK(split2.labeled.X.d == split.labeled.X.d);

  // num_labeled = dataset size leaves nothing unlabeled.
  const SemiSplit all = split_semi(d.data, 2000, 3);
  CHECK(all.unlabeled.size() == 0);

  CHECK_THROWS_AS(split_semi(d.data, 5, 3), std::invalid_argument);

  // Uneven quota: per-class counts differ by at most one.
  const SemiSplit uneven = split_semi(d.data, 1003, 3);
  std::vector<int> cnt(10, 0);
  for (int y : uneven.labeled.labels) cnt[y] += 1;
  for (int y : uneven.validation.labels) cnt[y] += 1;
  int lo = 1 << 30, hi = 0;
  for (int c = 0; c < 10; ++c) {
    lo = std::min(lo, cnt[c]);
    hi = std::max(hi, cnt[c]);
  }
  CHECK(hi - lo <= 1);
}
