// Throughput of the OpenMP kernels against the straight-line serial
// references, at desk scale and one size up.

#include <benchmark/benchmark.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "isda/instances.hpp"
#include "isda/mc.hpp"
#include "isda/reference.hpp"

using namespace isda;

namespace {

RandomInstance instance_for(int A, int C, int B) {
  Rng rng(12345);
  return make_random_instance(A, C, B, 1.0, rng);
}

AugmentationConfig aug_const(double lambda) {
  AugmentationConfig aug;
  aug.lambda0 = lambda;
  aug.schedule = Schedule::Constant;
  return aug;
}

void bm_surrogate_parallel(benchmark::State& state) {
  const RandomInstance inst = instance_for(static_cast<int>(state.range(0)), 10, 256);
  const AugmentationConfig aug = aug_const(0.5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(surrogate_loss(inst.batch, inst.head, inst.tracker, aug));
  }
}

void bm_surrogate_serial_ref(benchmark::State& state) {
  const RandomInstance inst = instance_for(static_cast<int>(state.range(0)), 10, 256);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ref::surrogate_loss(inst.batch, inst.head, inst.tracker, 0.5, CovMode::Full));
  }
}

void bm_consistency_parallel(benchmark::State& state) {
  const RandomInstance inst = instance_for(static_cast<int>(state.range(0)), 10, 256);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        consistency_surrogate(inst.soft_batch, inst.head, inst.tracker, 0.5, CovMode::Full));
  }
}

void bm_consistency_serial_ref(benchmark::State& state) {
  const RandomInstance inst = instance_for(static_cast<int>(state.range(0)), 10, 256);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ref::consistency_surrogate(inst.soft_batch, inst.head, inst.tracker, 0.5, CovMode::Full));
  }
}

void bm_tracker_update(benchmark::State& state) {
  const int A = static_cast<int>(state.range(0));
  Rng rng(7);
  Mat feats(256, A);
  std::vector<int> labels(256);
  for (int i = 0; i < 256; ++i) {
    labels[i] = static_cast<int>(rng.next_u64() % 10);
    for (int a = 0; a < A; ++a) feats(i, a) = rng.next_normal();
  }
  for (auto _ : state) {
    CovTracker t(10, A, CovMode::Full);
    t.update(feats, labels);
    benchmark::DoNotOptimize(t);
  }
}

void bm_mc_parallel(benchmark::State& state) {
  const RandomInstance inst = instance_for(8, 8, 4);
  const int M = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Rng rng(55);
    benchmark::DoNotOptimize(
        mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.5, M, rng));
  }
}

void bm_mc_serial_ref(benchmark::State& state) {
  const RandomInstance inst = instance_for(8, 8, 4);
  const int M = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Rng rng(55);
    benchmark::DoNotOptimize(
        ref::mc_expected_ce(inst.batch, inst.head, inst.tracker, CovMode::Full, 0.5, M, rng));
  }
}

}  // namespace

BENCHMARK(bm_surrogate_parallel)->Arg(64)->Arg(256);
BENCHMARK(bm_surrogate_serial_ref)->Arg(64)->Arg(256);
BENCHMARK(bm_consistency_parallel)->Arg(64)->Arg(128);
BENCHMARK(bm_consistency_serial_ref)->Arg(64)->Arg(128);
BENCHMARK(bm_tracker_update)->Arg(64)->Arg(256);
BENCHMARK(bm_mc_parallel)->Arg(10000)->Arg(100000);
BENCHMARK(bm_mc_serial_ref)->Arg(10000)->Arg(100000);

BENCHMARK_MAIN();
