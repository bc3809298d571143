// Serial reference kernels against their OpenMP counterparts, plus one
// pretraining step at several worker counts.

#include <benchmark/benchmark.h>

#include <omp.h>

#include <vector>

#include "famt/data.hpp"
#include "famt/kernels.hpp"
#include "famt/parallel.hpp"
#include "famt/rng.hpp"
#include "famt/trainer.hpp"

using namespace famt;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, 0, 0, RngStream::kData);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

using RawKernel = void (*)(const double*, const double*, double*, std::size_t, std::size_t,
                          std::size_t, bool);

template <RawKernel Kernel>
void matmul_case(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<double> c(n * n);
  set_workers(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    Kernel(a.data(), b.data(), c.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
  set_workers(1);
}

void matmul_args(benchmark::internal::Benchmark* b) {
  const int max_threads = omp_get_max_threads();
  for (int n : {64, 128, 256})
    for (int t : {1, 2, 4}) {
      if (t > 1 && t > max_threads) continue;
      b->Args({n, t});
    }
}

void serial_args(benchmark::internal::Benchmark* b) {
  for (int n : {64, 128, 256}) b->Args({n, 1});
}

BENCHMARK(matmul_case<kernels::serial::matmul>)->Name("matmul/serial")->Apply(serial_args);
BENCHMARK(matmul_case<kernels::matmul>)->Name("matmul/omp")->Apply(matmul_args);
BENCHMARK(matmul_case<kernels::serial::matmul_nt>)->Name("matmul_nt/serial")->Apply(serial_args);
BENCHMARK(matmul_case<kernels::matmul_nt>)->Name("matmul_nt/omp")->Apply(matmul_args);
BENCHMARK(matmul_case<kernels::serial::matmul_tn>)->Name("matmul_tn/serial")->Apply(serial_args);
BENCHMARK(matmul_case<kernels::matmul_tn>)->Name("matmul_tn/omp")->Apply(matmul_args);

void pretrain_step_case(benchmark::State& state) {
  SyntheticSpec spec;
  spec.num_samples = 32;
  spec.image_size = 32;
  const Dataset data = gen_synthetic(spec, 3);
  TrainConfig cfg;
  cfg.strategy = static_cast<Strategy>(state.range(0));
  cfg.warmup_epochs = 0;
  cfg.batch_size = 32;
  cfg.epochs = 1000;
  set_workers(static_cast<int>(state.range(1)));
  Trainer trainer(data, cfg, ViTConfig::desk());
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step().loss);
  set_workers(1);
}

BENCHMARK(pretrain_step_case)
    ->Name("pretrain_step/desk")
    ->ArgNames({"strategy", "workers"})
    ->Args({static_cast<int>(Strategy::kRandom), 1})
    ->Args({static_cast<int>(Strategy::kFAMT), 1})
    ->Args({static_cast<int>(Strategy::kFAMT), 2})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
