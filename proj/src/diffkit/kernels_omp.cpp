// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include <omp.h>

#include <cmath>
#include <cstdint>
#include <string>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"

namespace mmq::kernels {

namespace {
int g_max_threads = 0;

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

int threads() { return g_max_threads > 0 ? g_max_threads : omp_get_max_threads(); }

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1u << 14;
}  // namespace

void set_max_threads(int n) { g_max_threads = n; }
int max_threads() { return threads(); }

namespace omp {

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), kk = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const bool par = n * kk * m >= kParallelThreshold;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    double* crow = pc + i * m;
    for (std::size_t k = 0; k < kk; ++k) {
      const double aik = pa[i * kk + k];
      const double* brow = pb + k * m;
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  Matrix c(a.rows(), b.rows());
  const std::size_t n = a.rows(), m = b.rows(), kk = a.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const bool par = n * kk * m >= kParallelThreshold;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const double* arow = pa + i * kk;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * kk;
      double s = 0.0;
      for (std::size_t k = 0; k < kk; ++k) s += arow[k] * brow[k];
      pc[i * m + j] = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  Matrix c(a.cols(), b.cols());
  const std::size_t n = a.rows(), p = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const bool par = n * p * m >= kParallelThreshold;
  // Each output row i accumulates over r in ascending order, as in the serial loop.
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(p); ++i) {
    double* crow = pc + i * m;
    for (std::size_t r = 0; r < n; ++r) {
      const double ari = pa[r * p + i];
      const double* brow = pb + r * m;
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) crow[j] += ari * brow[j];
    }
  }
  return c;
}

Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y) {
  require(x.cols() == y.cols(), "pairwise_sq_dist", x, y);
  Matrix d(x.rows(), y.rows());
  const std::size_t n = x.rows(), m = y.rows(), kk = x.cols();
  const bool par = n * kk * m >= kParallelThreshold;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const double* xr = x.data() + i * kk;
    for (std::size_t j = 0; j < m; ++j) {
      const double* yr = y.data() + j * kk;
      double s = 0.0;
      for (std::size_t k = 0; k < kk; ++k) {
        const double t = xr[k] - yr[k];
        s += t * t;
      }
      d(static_cast<std::size_t>(i), j) = s;
    }
  }
  return d;
}

Matrix gaussian_gram(const Matrix& x, const Matrix& y, double sigma) {
  Matrix k = pairwise_sq_dist(x, y);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double* pk = k.data();
  const std::int64_t total = static_cast<std::int64_t>(k.size());
#pragma omp parallel for schedule(static) num_threads(threads()) if (k.size() >= 4096)
  for (std::int64_t i = 0; i < total; ++i) pk[i] = std::exp(-pk[i] * inv);
  return k;
}

NearestResult nearest_rows(const Matrix& x, const Matrix& codes) {
  require(x.cols() == codes.cols(), "nearest_rows", x, codes);
  if (codes.rows() == 0) throw InvalidArgument("nearest_rows: empty codebook");
  const std::size_t n = x.rows(), s_count = codes.rows(), kk = x.cols();
  NearestResult out{std::vector<std::size_t>(n), std::vector<double>(n)};
  const bool par = n * kk * s_count >= kParallelThreshold;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const double* xr = x.data() + i * kk;
    std::size_t best = 0;
    double best_d = 0.0;
    for (std::size_t j = 0; j < s_count; ++j) {
      const double* cr = codes.data() + j * kk;
      double s = 0.0;
      for (std::size_t k = 0; k < kk; ++k) {
        const double t = xr[k] - cr[k];
        s += t * t;
      }
      // strict < keeps the lowest index on ties
      if (j == 0 || s < best_d) {
        best = j;
        best_d = s;
      }
    }
    out.index[static_cast<std::size_t>(i)] = best;
    out.sq_distance[static_cast<std::size_t>(i)] = best_d;
  }
  return out;
}

}  // namespace omp
}  // namespace mmq::kernels
