#include <doctest.h>

#include <chrono>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "isda/instances.hpp"
#include "isda/loss.hpp"
#include "isda/reference.hpp"

using namespace isda;

namespace {

// The fixed one-dimensional two-class instance: a = 1, w = [1, -1], b = 0,
// label 0, Sigma_0 = 1 (fed as the exact population variance of {-1, +1}).
struct FixedInstance {
  ClassifierHead head;
  CovTracker tracker;
  LabeledBatch batch;

  FixedInstance() : tracker(2, 1, CovMode::Full) {
    head.W = Mat(2, 1);
    head.W(0, 0) = 1.0;
    head.W(1, 0) = -1.0;
    head.b = {0.0, 0.0};
    Mat feats(4, 1);
    feats(0, 0) = -1.0;
    feats(1, 0) = 1.0;
    feats(2, 0) = 2.0;  // class 1 filler
    feats(3, 0) = 4.0;
    tracker.update(feats, {0, 0, 1, 1});
    batch.features = Mat(1, 1);
    batch.features(0, 0) = 1.0;
    batch.labels = {0};
  }
};

AugmentationConfig constant_lambda(double lambda, CovMode mode = CovMode::Full) {
  AugmentationConfig aug;
  aug.lambda0 = lambda;
  aug.schedule = Schedule::Constant;
  aug.cov_mode = mode;
  return aug;
}

}  // namespace

TEST_CASE("lambda schedule") {
  AugmentationConfig cfg;
  cfg.lambda0 = 0.5;
  cfg.schedule = Schedule::LinearRamp;
  cfg.t = 0;
  cfg.T = 100;
  CHECK(lambda_at(cfg) == 0.0);
  cfg.t = 100;
  CHECK(lambda_at(cfg) == 0.5);
  cfg.t = 50;
  CHECK(lambda_at(cfg) == doctest::Approx(0.25).epsilon(1e-15));

  cfg.schedule = Schedule::Constant;
  cfg.lambda0 = 7.5;
  cfg.t = 3;
  CHECK(lambda_at(cfg) == 7.5);

  cfg.lambda0 = -1.0;
  CHECK_THROWS_AS(lambda_at(cfg), std::invalid_argument);
}

TEST_CASE("adjusted logits on the fixed instance") {
  FixedInstance fi;
  const Vec a{1.0};

  const Vec plain = adjusted_logits(a, 0, fi.head, fi.tracker, 0.0, CovMode::Full);
  CHECK(plain[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(plain[1] == doctest::Approx(-1.0).epsilon(1e-15));

  // lambda = 2: the non-target logit gains (2/2) * (-2)^2 * 1 = 4.
  const Vec adj = adjusted_logits(a, 0, fi.head, fi.tracker, 2.0, CovMode::Full);
  CHECK(adj[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(adj[1] == doctest::Approx(3.0).epsilon(1e-14));

  // Zero covariance class: plain logits at any lambda.
  CovTracker zero(2, 1, CovMode::Full);
  const Vec z2 = adjusted_logits(a, 0, fi.head, zero, 5.0, CovMode::Full);
  CHECK(z2[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(z2[1] == doctest::Approx(-1.0).epsilon(1e-15));

  Vec wrong{1.0, 2.0};
  CHECK_THROWS_AS(adjusted_logits(wrong, 0, fi.head, fi.tracker, 1.0, CovMode::Full),
                  std::invalid_argument);
}

TEST_CASE("surrogate loss values on pinned instances") {
  // Zero head: uniform logits regardless of covariance.
  ClassifierHead zero_head;
  zero_head.W = Mat(2, 3, 0.0);
  zero_head.b = {0.0, 0.0};
  CovTracker t(2, 3, CovMode::Full);
  LabeledBatch batch;
  batch.features = Mat(1, 3);
  batch.features(0, 0) = 0.7;
  batch.labels = {0};
  const LossReport uni = surrogate_loss(batch, zero_head, t, constant_lambda(1.0));
  CHECK(uni.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(uni.grad_b[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(uni.grad_b[1] == doctest::Approx(0.5).epsilon(1e-15));

  FixedInstance fi;
  const LossReport adj = surrogate_loss(fi.batch, fi.head, fi.tracker, constant_lambda(2.0));
  CHECK(adj.loss == doctest::Approx(std::log(1.0 + std::exp(2.0))).epsilon(1e-14));

  const LossReport ce = surrogate_loss(fi.batch, fi.head, fi.tracker, constant_lambda(0.0));
  CHECK(ce.loss == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-14));
  CHECK(ce.loss == cross_entropy(fi.batch, fi.head).loss);
}

TEST_CASE("lambda -> 0 reduction is exact") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    RandomInstance inst = make_random_instance(4, 5, 7, 1.3, rng);
    const double a = surrogate_loss(inst.batch, inst.head, inst.tracker, constant_lambda(0.0)).loss;
    const double b = cross_entropy(inst.batch, inst.head).loss;
    CHECK(std::abs(a - b) < 1e-12);
  }
}

TEST_CASE("errors: empty batch, non-finite intermediates") {
  FixedInstance fi;
  LabeledBatch empty;
  empty.features = Mat(0, 1);
  CHECK_THROWS_AS(surrogate_loss(empty, fi.head, fi.tracker, constant_lambda(0.5)),
                  std::invalid_argument);

  LabeledBatch nan_batch = fi.batch;
  nan_batch.features(0, 0) = std::nan("");
  CHECK_THROWS_AS(surrogate_loss(nan_batch, fi.head, fi.tracker, constant_lambda(0.5)),
                  std::runtime_error);

  LabeledBatch bad_label = fi.batch;
  bad_label.labels = {9};
  CHECK_THROWS_AS(surrogate_loss(bad_label, fi.head, fi.tracker, constant_lambda(0.5)),
                  std::invalid_argument);
}

TEST_CASE("gradients match central finite differences in every mode") {
  Rng rng(43);
  for (CovMode mode : {CovMode::Full, CovMode::Diagonal, CovMode::Identity, CovMode::Shared}) {
    RandomInstance inst = make_random_instance(4, 4, 6, 1.0, rng, mode);
    const AugmentationConfig aug = constant_lambda(0.9, mode);
    const LossReport rep = surrogate_loss(inst.batch, inst.head, inst.tracker, aug);
    const double h = 1e-6;

    for (size_t k = 0; k < inst.head.W.d.size(); ++k) {
      ClassifierHead hp = inst.head, hm = inst.head;
      hp.W.d[k] += h;
      hm.W.d[k] -= h;
      const double fd = (surrogate_loss(inst.batch, hp, inst.tracker, aug).loss -
                         surrogate_loss(inst.batch, hm, inst.tracker, aug).loss) /
                        (2 * h);
      CHECK(std::abs(fd - rep.grad_W.d[k]) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
    for (size_t k = 0; k < inst.head.b.size(); ++k) {
      ClassifierHead hp = inst.head, hm = inst.head;
      hp.b[k] += h;
      hm.b[k] -= h;
      const double fd = (surrogate_loss(inst.batch, hp, inst.tracker, aug).loss -
                         surrogate_loss(inst.batch, hm, inst.tracker, aug).loss) /
                        (2 * h);
      CHECK(std::abs(fd - rep.grad_b[k]) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
    for (size_t k = 0; k < inst.batch.features.d.size(); ++k) {
      LabeledBatch bp = inst.batch, bm = inst.batch;
      bp.features.d[k] += h;
      bm.features.d[k] -= h;
      const double fd = (surrogate_loss(bp, inst.head, inst.tracker, aug).loss -
                         surrogate_loss(bm, inst.head, inst.tracker, aug).loss) /
                        (2 * h);
      CHECK(std::abs(fd - rep.grad_features.d[k]) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("surrogate is non-decreasing in lambda") {
  Rng rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    RandomInstance inst = make_random_instance(5, 4, 5, 1.2, rng);
    double prev = -1e300;
    for (double lambda : {0.0, 0.1, 0.5, 1.0, 2.0, 4.0}) {
      const double v =
          surrogate_loss(inst.batch, inst.head, inst.tracker, constant_lambda(lambda)).loss;
      CHECK(v >= prev - 1e-10);
      prev = v;
    }
  }
}

TEST_CASE("moment-generating closed form is an identity, not a bound") {
  Rng rng(53);
  for (int trial = 0; trial < 25; ++trial) {
    RandomInstance inst = make_random_instance(4, 6, 8, 1.0, rng);
    const double lambda = 0.25 + 1.5 * rng.next_uniform();
    const double sur =
        surrogate_loss(inst.batch, inst.head, inst.tracker, constant_lambda(lambda)).loss;
    const double mgf = ref::mgf_intermediate(inst.batch, inst.head, inst.tracker, lambda,
                                             CovMode::Full);
    CHECK(std::abs(sur - mgf) < 1e-11 * std::max(1.0, std::abs(sur)));
  }
}

TEST_CASE("production kernel agrees with the serial reference") {
  Rng rng(59);
  for (int trial = 0; trial < 10; ++trial) {
    RandomInstance inst = make_random_instance(5, 6, 70, 1.1, rng);
    const double lambda = 0.8;
    const LossReport fast =
        surrogate_loss(inst.batch, inst.head, inst.tracker, constant_lambda(lambda));
    const LossReport slow =
        ref::surrogate_loss(inst.batch, inst.head, inst.tracker, lambda, CovMode::Full);
    CHECK(fast.loss == doctest::Approx(slow.loss).epsilon(1e-12));
    for (size_t k = 0; k < fast.grad_W.d.size(); ++k) {
      CHECK(fast.grad_W.d[k] == doctest::Approx(slow.grad_W.d[k]).epsilon(1e-10));
    }
    for (size_t k = 0; k < fast.grad_b.size(); ++k) {
      CHECK(fast.grad_b[k] == doctest::Approx(slow.grad_b[k]).epsilon(1e-10));
    }
  }
}

#ifdef _OPENMP
TEST_CASE("results are independent of the thread count") {
  Rng rng(61);
  RandomInstance inst = make_random_instance(6, 5, 100, 1.0, rng);
  const AugmentationConfig aug = constant_lambda(0.7);

  const int old = omp_get_max_threads();
  omp_set_num_threads(1);
  const LossReport serial = surrogate_loss(inst.batch, inst.head, inst.tracker, aug);
  omp_set_num_threads(std::max(2, old));
  const LossReport parallel = surrogate_loss(inst.batch, inst.head, inst.tracker, aug);
  omp_set_num_threads(old);

  CHECK(serial.loss == parallel.loss);  // bit-exact
  CHECK(serial.grad_W.d == parallel.grad_W.d);
  CHECK(serial.grad_b == parallel.grad_b);
  CHECK(serial.grad_features.d == parallel.grad_features.d);
}
#endif

TEST_CASE("evaluation cost scales quadratically in the feature dim") {
  // Doubling A at fixed C predicts a x4 time ratio; accept a wide band
  // around it to tolerate scheduler noise.
  const int C = 10;
  Rng rng(67);

  auto time_at = [&](int A) {
    RandomInstance inst = make_random_instance(A, C, 256, 1.0, rng);
    const AugmentationConfig aug = constant_lambda(0.5);
#ifdef _OPENMP
    omp_set_num_threads(1);
#endif
    surrogate_loss(inst.batch, inst.head, inst.tracker, aug);  // warm up
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      surrogate_loss(inst.batch, inst.head, inst.tracker, aug);
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      best = std::min(best, ms);
    }
    return best;
  };

  const double t64 = time_at(64);
  const double t128 = time_at(128);
#ifdef _OPENMP
  omp_set_num_threads(omp_get_num_procs());
#endif
  const double ratio = t128 / t64;
  CHECK(ratio > 1.6);
  CHECK(ratio < 10.4);
}

TEST_CASE("extra-flop tally") {
  CHECK(isda_extra_flops_per_sample(CovMode::Full, 64, 10) == 64 * 64 + 10 * 64 * 64);
  CHECK(isda_extra_flops_per_sample(CovMode::Diagonal, 64, 10) == 64 + 10 * 64);
  CHECK(isda_extra_flops_per_sample(CovMode::Identity, 64, 10) == 10 * 64);
  CHECK(isda_extra_flops_per_sample(CovMode::Shared, 64, 10) == 64 * 64 + 10 * 64 * 64);
}
