// SPDX-License-Identifier: Apache-2.0
//
// Serial reference vs OpenMP kernels.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "normalign/kernels.hpp"

namespace k = normalign::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <auto Kernel>
void gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Kernel>
void rows(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64;
  const auto x = random_values(n * d, 3);
  std::vector<double> out(n * d);
  for (auto _ : state) {
    Kernel(x, out, n, d);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * d));
}

template <auto Kernel>
void norms(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64;
  const auto x = random_values(n * d, 4);
  std::vector<double> out(n);
  for (auto _ : state) {
    Kernel(x, out, n, d, 1e-12);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * d));
}

}  // namespace

BENCHMARK(gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<k::parallel::gemm_nn>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<k::serial::gemm_nt>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<k::parallel::gemm_nt>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<k::parallel::gemm_tn>)->Name("gemm_tn/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(rows<k::serial::softmax_rows>)->Name("softmax_rows/serial")->Range(256, 16384);
BENCHMARK(rows<k::parallel::softmax_rows>)->Name("softmax_rows/parallel")->Range(256, 16384);
BENCHMARK(rows<k::serial::log_softmax_rows>)->Name("log_softmax_rows/serial")->Range(256, 16384);
BENCHMARK(rows<k::parallel::log_softmax_rows>)->Name("log_softmax_rows/parallel")->Range(256, 16384);
BENCHMARK(norms<k::serial::row_l2_norms>)->Name("row_l2_norms/serial")->Range(256, 16384);
BENCHMARK(norms<k::parallel::row_l2_norms>)->Name("row_l2_norms/parallel")->Range(256, 16384);

BENCHMARK_MAIN();
