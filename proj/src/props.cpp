#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "isda/instances.hpp"
#include "isda/mc.hpp"
#include "isda/reference.hpp"
#include "isda/runner.hpp"
#include "isda/trainer.hpp"

namespace isda::runner {

namespace {

struct PropRunner {
  int failures = 0;

  void check(const char* name, const std::function<bool()>& fn) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      std::printf("[FAIL] %s (exception: %s)\n", name, e.what());
      failures += 1;
      return;
    }
    std::printf("[%s] %s\n", ok ? " ok " : "FAIL", name);
    if (!ok) failures += 1;
  }
};

double frob_diff(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.d.size(); ++i) s += (a.d[i] - b.d[i]) * (a.d[i] - b.d[i]);
  return std::sqrt(s);
}

double frob(const Mat& a) {
  double s = 0.0;
  for (double v : a.d) s += v * v;
  return std::sqrt(s);
}

}  // namespace

int run_test_props(const json& config, const std::string& out_dir) {
  (void)out_dir;
  const uint64_t seed = config.at("seed").get<uint64_t>();
  PropRunner pr;

  pr.check("logsumexp shift invariance", [&] {
    Rng rng(seed);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 1 + static_cast<int>(rng.next_u64() % 16);
      Vec z(n);
      for (auto& v : z) v = 10.0 * rng.next_normal();
      const double c = 5.0 * rng.next_normal();
      Vec shifted = z;
      for (auto& v : shifted) v += c;
      if (std::abs(logsumexp(shifted) - logsumexp(z) - c) > 1e-12) return false;
    }
    return true;
  });

  pr.check("psd_factor reconstruction and refactor idempotence", [&] {
    Rng rng(seed + 1);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + static_cast<int>(rng.next_u64() % 6);
      Mat X(n, n);
      for (auto& v : X.d) v = rng.next_normal();
      Mat S(n, n, 0.0);
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          for (int k = 0; k < n; ++k) S(r, c) += X(k, r) * X(k, c);
        }
      }
      const Mat L = psd_factor(S, 0.0);
      Mat R(n, n, 0.0);
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          for (int k = 0; k <= std::min(r, c); ++k) R(r, c) += L(r, k) * L(c, k);
        }
      }
      const double resid = frob_diff(R, S);
      if (resid > 1e-8 * (frob(S) + 1.0)) return false;
      const Mat L2 = psd_factor(R, 0.0);
      Mat R2(n, n, 0.0);
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          for (int k = 0; k <= std::min(r, c); ++k) R2(r, c) += L2(r, k) * L2(c, k);
        }
      }
      if (frob_diff(R2, R) > resid + 1e-12 + 1e-12 * frob(S)) return false;
    }
    return true;
  });

  pr.check("tracker pooling exactness over random partitions", [&] {
    Rng rng(seed + 2);
    for (int trial = 0; trial < 10; ++trial) {
      const int C = 2 + static_cast<int>(rng.next_u64() % 3);
      const int A = 1 + static_cast<int>(rng.next_u64() % 5);
      const int N = 40 + static_cast<int>(rng.next_u64() % 60);
      Mat X(N, A);
      std::vector<int> y(N);
      for (int i = 0; i < N; ++i) {
        y[i] = static_cast<int>(rng.next_u64() % C);
        for (int a = 0; a < A; ++a) X(i, a) = 3.0 * rng.next_normal();
      }
      CovTracker t(C, A, CovMode::Full);
      int pos = 0;
      while (pos < N) {
        const int take = 1 + static_cast<int>(rng.next_u64() % 7);
        const int hi = std::min(N, pos + take);
        Mat bx(hi - pos, A);
        std::vector<int> by(hi - pos);
        for (int i = pos; i < hi; ++i) {
          by[i - pos] = y[i];
          for (int a = 0; a < A; ++a) bx(i - pos, a) = X(i, a);
        }
        t.update(bx, by);
        pos = hi;
      }
      for (int c = 0; c < C; ++c) {
        const auto oracle = ref::population_moments(X, y, c, A);
        if (oracle.count != t.count(c)) return false;
        if (oracle.count == 0) continue;
        const Mat est = t.covariance(c, CovMode::Full);
        if (frob_diff(est, oracle.cov) > 1e-10 * (frob(oracle.cov) + 1.0)) return false;
      }
    }
    return true;
  });

  pr.check("lambda -> 0 reduces to cross-entropy", [&] {
    Rng rng(seed + 3);
    for (int trial = 0; trial < 100; ++trial) {
      RandomInstance inst = make_random_instance(3, 4, 6, 1.0, rng);
      AugmentationConfig aug;
      aug.lambda0 = 0.0;
      aug.schedule = Schedule::Constant;
      const LossReport a = surrogate_loss(inst.batch, inst.head, inst.tracker, aug);
      const LossReport b = cross_entropy(inst.batch, inst.head);
      if (std::abs(a.loss - b.loss) > 1e-12) return false;
    }
    return true;
  });

  pr.check("analytic gradients match finite differences", [&] {
    Rng rng(seed + 4);
    for (CovMode mode :
         {CovMode::Full, CovMode::Diagonal, CovMode::Identity, CovMode::Shared}) {
      RandomInstance inst = make_random_instance(3, 3, 4, 1.0, rng, mode);
      AugmentationConfig aug;
      aug.lambda0 = 0.8;
      aug.schedule = Schedule::Constant;
      aug.cov_mode = mode;
      const LossReport rep = surrogate_loss(inst.batch, inst.head, inst.tracker, aug);
      const double h = 1e-6;
      for (size_t k = 0; k < inst.head.W.d.size(); k += 2) {
        ClassifierHead hp = inst.head, hm = inst.head;
        hp.W.d[k] += h;
        hm.W.d[k] -= h;
        const double fp = surrogate_loss(inst.batch, hp, inst.tracker, aug).loss;
        const double fm = surrogate_loss(inst.batch, hm, inst.tracker, aug).loss;
        const double fd = (fp - fm) / (2 * h);
        if (std::abs(fd - rep.grad_W.d[k]) > 1e-5 * std::max(1.0, std::abs(fd))) return false;
      }
    }
    return true;
  });

  pr.check("surrogate non-decreasing in lambda", [&] {
    Rng rng(seed + 5);
    for (int trial = 0; trial < 30; ++trial) {
      RandomInstance inst = make_random_instance(4, 4, 4, 1.0, rng);
      double prev = -1e300;
      for (double lambda : {0.0, 0.25, 0.5, 1.0, 2.0}) {
        AugmentationConfig aug;
        aug.lambda0 = lambda;
        aug.schedule = Schedule::Constant;
        const double v = surrogate_loss(inst.batch, inst.head, inst.tracker, aug).loss;
        if (v < prev - 1e-10) return false;
        prev = v;
      }
    }
    return true;
  });

  pr.check("moment-generating closed form equals the surrogate", [&] {
    Rng rng(seed + 6);
    for (int trial = 0; trial < 40; ++trial) {
      RandomInstance inst = make_random_instance(4, 5, 6, 1.0, rng);
      AugmentationConfig aug;
      aug.lambda0 = 0.7;
      aug.schedule = Schedule::Constant;
      const double sur = surrogate_loss(inst.batch, inst.head, inst.tracker, aug).loss;
      const double mgf =
          ref::mgf_intermediate(inst.batch, inst.head, inst.tracker, 0.7, CovMode::Full);
      if (std::abs(sur - mgf) > 1e-10 * std::max(1.0, std::abs(sur))) return false;
    }
    return true;
  });

  pr.check("consistency decomposes into hard-label surrogates", [&] {
    Rng rng(seed + 7);
    for (int trial = 0; trial < 30; ++trial) {
      RandomInstance inst = make_random_instance(3, 4, 5, 1.0, rng);
      const double lambda = 0.9;
      const LossReport cons = consistency_surrogate(inst.soft_batch, inst.head, inst.tracker,
                                                    lambda, CovMode::Full);
      const std::vector<int> pseudo = pseudo_labels(inst.soft_batch.probs);
      double expected = 0.0;
      for (int i = 0; i < inst.soft_batch.features.rows; ++i) {
        Vec a(inst.soft_batch.features.row(i), inst.soft_batch.features.row(i) + 3);
        for (int k = 0; k < 4; ++k) {
          const Vec z = adjusted_logits_about(a, k, pseudo[i], inst.head, inst.tracker, lambda,
                                              CovMode::Full);
          expected += inst.soft_batch.probs(i, k) * (logsumexp(z) - z[k]);
        }
      }
      expected /= inst.soft_batch.features.rows;
      if (std::abs(cons.loss - expected) > 1e-10 * std::max(1.0, std::abs(expected))) {
        return false;
      }
    }
    return true;
  });

  pr.check("bound dominance vs Monte-Carlo (smoke)", [&] {
    Rng rng(seed + 8);
    for (int trial = 0; trial < 10; ++trial) {
      RandomInstance inst = make_random_instance(4, 4, 2, 1.0, rng);
      AugmentationConfig aug;
      aug.lambda0 = 0.25 + 1.5 * rng.next_uniform();
      aug.schedule = Schedule::Constant;
      const double sur = surrogate_loss(inst.batch, inst.head, inst.tracker, aug).loss;
      Rng mc_rng = rng.split(trial);
      const McEstimate mc = mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full,
                                           aug.lambda0, 20000, mc_rng);
      if (sur < mc.estimate - 3.0 * mc.std_error) return false;
    }
    return true;
  });

  pr.check("mc estimate independent of rng call site splits", [&] {
    Rng rng(seed + 9);
    RandomInstance inst = make_random_instance(3, 3, 4, 1.0, rng);
    Rng r1 = Rng(123).split(5);
    Rng r2 = Rng(123).split(5);
    const McEstimate a =
        mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.5, 5000, r1);
    const McEstimate b =
        mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.5, 5000, r2);
    return a.estimate == b.estimate && a.std_error == b.std_error;
  });

  pr.check("explicit loss at lambda=0, M=1 equals cross-entropy", [&] {
    Rng rng(seed + 10);
    RandomInstance inst = make_random_instance(3, 4, 6, 1.0, rng);
    Rng r(7);
    const double ex = explicit_loss(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.0, 1, r);
    const double ce = cross_entropy(inst.batch, inst.head).loss;
    return std::abs(ex - ce) < 1e-12;
  });

  pr.check("extra-flop tally quadruples when A doubles", [&] {
    for (int A : {8, 32, 64}) {
      const int64_t f1 = isda_extra_flops_per_sample(CovMode::Full, A, 10);
      const int64_t f2 = isda_extra_flops_per_sample(CovMode::Full, 2 * A, 10);
      if (f2 != 4 * f1) return false;
    }
    return true;
  });

  std::printf("test-props: %d failure(s)\n", pr.failures);
  return pr.failures == 0 ? 0 : 1;
}

}  // namespace isda::runner
