// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against their OpenMP counterparts. Thread count
// follows OMP_NUM_THREADS / MMQ_THREADS as set for the process.

#include <benchmark/benchmark.h>

#include <cstdlib>

#include "mmq/diffkit/kernels.hpp"
#include "mmq/diffkit/rng.hpp"

namespace {

using mmq::Matrix;
namespace k = mmq::kernels;

Matrix random(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  mmq::Rng rng(seed);
  return rng.normal_matrix(rows, cols);
}

template <Matrix (*Fn)(const Matrix&, const Matrix&)>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random(n, n, 1), b = random(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

// Batch of rows against a codebook-sized table.
template <Matrix (*Fn)(const Matrix&, const Matrix&)>
void BM_PairwiseSqDist(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random(n, 32, 3), y = random(256, 32, 4);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(x, y));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 256));
}

template <Matrix (*Fn)(const Matrix&, const Matrix&, double)>
void BM_GaussianGram(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random(n, 32, 5), y = random(n, 32, 6);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(x, y, 2.0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <k::NearestResult (*Fn)(const Matrix&, const Matrix&)>
void BM_NearestRows(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random(n, 32, 7), codes = random(256, 32, 8);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(x, codes));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 256));
}

}  // namespace

BENCHMARK(BM_Matmul<k::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Matmul<k::omp::matmul>)->Name("matmul/omp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_PairwiseSqDist<k::serial::pairwise_sq_dist>)->Name("pairwise_sq_dist/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_PairwiseSqDist<k::omp::pairwise_sq_dist>)->Name("pairwise_sq_dist/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_GaussianGram<k::serial::gaussian_gram>)->Name("gaussian_gram/serial")->Arg(128)->Arg(512);
BENCHMARK(BM_GaussianGram<k::omp::gaussian_gram>)->Name("gaussian_gram/omp")->Arg(128)->Arg(512);
BENCHMARK(BM_NearestRows<k::serial::nearest_rows>)->Name("nearest_rows/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_NearestRows<k::omp::nearest_rows>)->Name("nearest_rows/omp")->Arg(256)->Arg(1024);

int main(int argc, char** argv) {
  if (const char* env = std::getenv("MMQ_THREADS")) k::set_max_threads(std::atoi(env));
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
