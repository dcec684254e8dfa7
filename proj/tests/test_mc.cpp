#include <doctest.h>

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "isda/instances.hpp"
#include "isda/mc.hpp"
#include "isda/reference.hpp"

using namespace isda;

namespace {

AugmentationConfig constant_lambda(double lambda) {
  AugmentationConfig aug;
  aug.lambda0 = lambda;
  aug.schedule = Schedule::Constant;
  return aug;
}

}  // namespace

TEST_CASE("sample_augmented basics") {
  Rng rng(1);
  RandomInstance inst = make_random_instance(3, 3, 1, 1.0, rng);
  const Vec a{0.5, -0.25, 1.0};

  // lambda = 0: M exact copies.
  Rng r0(9);
  const Mat copies = sample_augmented(a, 0, 0.0, inst.tracker, CovMode::Full, 5, r0);
  for (int m = 0; m < 5; ++m) {
    for (int k = 0; k < 3; ++k) CHECK(copies(m, k) == a[k]);
  }

  // Fixed seed reproducibility.
  Rng r1(33), r2(33);
  const Mat d1 = sample_augmented(a, 1, 0.7, inst.tracker, CovMode::Full, 1, r1);
  const Mat d2 = sample_augmented(a, 1, 0.7, inst.tracker, CovMode::Full, 1, r2);
  CHECK(d1.d == d2.d);
}

TEST_CASE("sample_augmented moments at one million draws") {
  // A = 2 so the run stays fast; empirical mean/cov within 4-sigma bands.
  Rng gen(4);
  CovTracker tracker(2, 2, CovMode::Full);
  Mat feats(400, 2);
  std::vector<int> labels(400);
  for (int i = 0; i < 400; ++i) {
    labels[i] = static_cast<int>(gen.next_u64() % 2);
    feats(i, 0) = gen.next_normal();
    feats(i, 1) = 0.5 * feats(i, 0) + 0.8 * gen.next_normal();
  }
  tracker.update(feats, labels);

  const double lambda = 0.6;
  const Vec a{1.0, -2.0};
  const int M = 1000000;
  Rng rng(5);
  const Mat draws = sample_augmented(a, 0, lambda, tracker, CovMode::Full, M, rng);

  Mat target = tracker.covariance(0, CovMode::Full);
  for (auto& v : target.d) v *= lambda;

  Vec mean(2, 0.0);
  for (int m = 0; m < M; ++m) {
    mean[0] += draws(m, 0);
    mean[1] += draws(m, 1);
  }
  mean[0] /= M;
  mean[1] /= M;
  for (int k = 0; k < 2; ++k) {
    const double sigma = std::sqrt(target(k, k) / M);
    CHECK(std::abs(mean[k] - a[k]) < 4.0 * sigma);
  }
  Mat cov(2, 2, 0.0);
  for (int m = 0; m < M; ++m) {
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) cov(r, c) += (draws(m, r) - mean[r]) * (draws(m, c) - mean[c]);
    }
  }
  for (auto& v : cov.d) v /= M;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      // Var of a covariance entry is O(sigma^2/M); 4-sigma with slack.
      const double band = 4.0 * (target(r, r) + target(c, c)) / std::sqrt(double(M));
      CHECK(std::abs(cov(r, c) - target(r, c)) < band + 1e-9);
    }
  }
}

TEST_CASE("explicit loss reductions") {
  Rng rng(7);
  RandomInstance inst = make_random_instance(3, 4, 6, 1.0, rng);

  Rng r(2);
  const double ex = explicit_loss(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.0, 1, r);
  CHECK(ex == doctest::Approx(cross_entropy(inst.batch, inst.head).loss).epsilon(1e-15));
}

TEST_CASE("mc_expected_ce at lambda = 0 is (CE, 0)") {
  Rng rng(8);
  RandomInstance inst = make_random_instance(4, 3, 5, 1.0, rng);
  Rng r(3);
  const McEstimate est =
      mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.0, 1000, r);
  CHECK(est.estimate == doctest::Approx(cross_entropy(inst.batch, inst.head).loss).epsilon(1e-13));
  CHECK(est.std_error == 0.0);
}

TEST_CASE("fixed instance: the bound gap is positive and reported") {
  // a = 1, w = [1, -1], b = 0, y = 0, Sigma_0 = 1, lambda = 2: the
  // surrogate is log(1 + e^2); the true expected CE sits strictly below.
  ClassifierHead head;
  head.W = Mat(2, 1);
  head.W(0, 0) = 1.0;
  head.W(1, 0) = -1.0;
  head.b = {0.0, 0.0};
  CovTracker tracker(2, 1, CovMode::Full);
  Mat feats(4, 1);
  feats(0, 0) = -1.0;
  feats(1, 0) = 1.0;
  feats(2, 0) = 2.0;
  feats(3, 0) = 6.0;
  tracker.update(feats, {0, 0, 1, 1});

  LabeledBatch batch;
  batch.features = Mat(1, 1);
  batch.features(0, 0) = 1.0;
  batch.labels = {0};

  Rng rng(21);
  const McEstimate est =
      mc_expected_ce(batch, head, tracker, CovMode::Full, 2.0, 1000000, rng);
  const double surrogate = std::log(1.0 + std::exp(2.0));
  CHECK(est.estimate < surrogate);
  CHECK(est.std_error > 0.0);
  CHECK(est.std_error < 0.01);
  CHECK(surrogate - est.estimate > 10.0 * est.std_error);  // a real gap, not noise
}

TEST_CASE("estimates are reproducible and independent of batch context") {
  Rng rng(9);
  RandomInstance inst = make_random_instance(3, 3, 4, 1.0, rng);

  Rng r1(55), r2(55);
  const McEstimate a =
      mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.5, 4000, r1);
  const McEstimate b =
      mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.5, 4000, r2);
  CHECK(a.estimate == b.estimate);
  CHECK(a.std_error == b.std_error);

  // Per-sample streams are disjoint: a batch of the same row twice draws
  // two independent streams, so the two per-sample means differ while both
  // estimate the same quantity.
  LabeledBatch twice;
  twice.features = Mat(2, 3);
  for (int k = 0; k < 3; ++k) {
    twice.features(0, k) = inst.batch.features(0, k);
    twice.features(1, k) = inst.batch.features(0, k);
  }
  twice.labels = {inst.batch.labels[0], inst.batch.labels[0]};
  LabeledBatch once;
  once.features = Mat(1, 3);
  for (int k = 0; k < 3; ++k) once.features(0, k) = inst.batch.features(0, k);
  once.labels = {inst.batch.labels[0]};
  Rng r3(55), r4a(55);
  const McEstimate two =
      mc_expected_ce(twice, inst.head, inst.tracker, CovMode::Full, 0.5, 4000, r3);
  const McEstimate one =
      mc_expected_ce(once, inst.head, inst.tracker, CovMode::Full, 0.5, 4000, r4a);
  CHECK(two.estimate != one.estimate);  // distinct streams, same target
  CHECK(std::abs(two.estimate - one.estimate) < 4.0 * (one.std_error + two.std_error));

#ifdef _OPENMP
  const int old = omp_get_max_threads();
  omp_set_num_threads(1);
  Rng r6(55);
  const McEstimate serial =
      mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.5, 4000, r6);
  omp_set_num_threads(std::max(2, old));
  Rng r5(55);
  const McEstimate parallel =
      mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.5, 4000, r5);
  omp_set_num_threads(old);
  CHECK(serial.estimate == parallel.estimate);  // bit-exact across thread counts
  CHECK(serial.std_error == parallel.std_error);
#endif
}

TEST_CASE("mc engine agrees with the serial reference within noise") {
  Rng rng(10);
  RandomInstance inst = make_random_instance(3, 3, 3, 1.0, rng);
  Rng r1(77);
  const McEstimate fast =
      mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.8, 40000, r1);
  Rng r2(78);
  const McEstimate slow =
      ref::mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.8, 40000, r2);
  const double band = 4.0 * std::sqrt(fast.std_error * fast.std_error +
                                      slow.std_error * slow.std_error);
  CHECK(std::abs(fast.estimate - slow.estimate) < band);
}

TEST_CASE("doubling M halves the estimator variance (F-test at 1%)") {
  Rng rng(12);
  RandomInstance inst = make_random_instance(3, 3, 2, 1.0, rng);
  const int R = 50;
  auto replicate_var = [&](int M, uint64_t salt) {
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < R; ++r) {
      Rng rr = Rng(salt).split(r);
      const double v =
          explicit_loss(inst.batch, inst.head, inst.tracker, CovMode::Full, 1.0, M, rr);
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / R;
    return (sumsq - R * mean * mean) / (R - 1);
  };
  const double v1 = replicate_var(500, 100);
  const double v2 = replicate_var(1000, 200);
  const double ratio = v1 / v2;
  // Expected 2; F(49, 49) two-sided 1% critical value is about 1.956.
  CHECK(ratio > 2.0 / 1.956);
  CHECK(ratio < 2.0 * 1.956);
}

TEST_CASE("bound gap is non-negative and grows with lambda") {
  Rng rng(14);
  for (int trial = 0; trial < 5; ++trial) {
    RandomInstance inst = make_random_instance(4, 4, 3, 1.0, rng);
    double prev_gap = -1e-9;
    for (double lambda : {0.0, 0.25, 0.5, 1.0}) {
      const double sur =
          surrogate_loss(inst.batch, inst.head, inst.tracker, constant_lambda(lambda)).loss;
      Rng r(500 + trial);
      McEstimate est;
      if (lambda == 0.0) {
        est.estimate = cross_entropy(inst.batch, inst.head).loss;
        est.std_error = 0.0;
      } else {
        est = mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, lambda, 200000,
                             r);
      }
      const double gap = sur - est.estimate;
      CHECK(gap >= -3.0 * est.std_error);
      CHECK(gap >= prev_gap - 4.0 * est.std_error - 1e-9);  // non-decreasing within noise
      prev_gap = gap;
    }
  }
}

TEST_CASE("mc_expected_kl reductions") {
  Rng rng(15);
  RandomInstance inst = make_random_instance(3, 4, 4, 1.0, rng);

  // One-hot probs: equals mc_expected_ce with the hard labels.
  UnlabeledBatch onehot;
  onehot.features = inst.batch.features;
  onehot.probs = Mat(onehot.features.rows, 4, 0.0);
  for (int i = 0; i < onehot.probs.rows; ++i) onehot.probs(i, inst.batch.labels[i]) = 1.0;
  Rng r1(91), r2(91);
  const McEstimate kl =
      mc_expected_kl(onehot, inst.head, inst.tracker, CovMode::Full, 0.7, 20000, r1);
  const McEstimate ce =
      mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.7, 20000, r2);
  CHECK(kl.estimate == doctest::Approx(ce.estimate).epsilon(1e-12));

  // lambda = 0: soft cross-entropy exactly, zero standard error.
  Rng r3(92);
  const McEstimate soft =
      mc_expected_kl(inst.soft_batch, inst.head, inst.tracker, CovMode::Full, 0.0, 1000, r3);
  const LossReport direct =
      consistency_surrogate(inst.soft_batch, inst.head, inst.tracker, 0.0, CovMode::Full);
  CHECK(soft.estimate == doctest::Approx(direct.loss).epsilon(1e-12));
  CHECK(soft.std_error == 0.0);

  // Proposition 2 dominance on a random instance.
  Rng r4(93);
  const McEstimate est =
      mc_expected_kl(inst.soft_batch, inst.head, inst.tracker, CovMode::Full, 1.0, 200000, r4);
  const LossReport sur =
      consistency_surrogate(inst.soft_batch, inst.head, inst.tracker, 1.0, CovMode::Full);
  CHECK(est.estimate <= sur.loss + 3.0 * est.std_error);
}
