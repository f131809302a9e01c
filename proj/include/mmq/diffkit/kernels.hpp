// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "mmq/diffkit/matrix.hpp"

// Dense kernels used by every trainable module. Each kernel exists twice:
// `serial` is the reference, `omp` parallelizes over output rows. Both sum
// every reduction in the same index order, so their results are bitwise equal
// for any thread count. Library code calls the unqualified dispatchers.
namespace mmq::kernels {

struct NearestResult {
  std::vector<std::size_t> index;
  std::vector<double> sq_distance;
};

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);     // a·b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a·bᵀ
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // aᵀ·b
Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y);
Matrix gaussian_gram(const Matrix& x, const Matrix& y, double sigma);
NearestResult nearest_rows(const Matrix& x, const Matrix& codes);
}  // namespace serial

namespace omp {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y);
Matrix gaussian_gram(const Matrix& x, const Matrix& y, double sigma);
NearestResult nearest_rows(const Matrix& x, const Matrix& codes);
}  // namespace omp

inline Matrix matmul(const Matrix& a, const Matrix& b) { return omp::matmul(a, b); }
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) { return omp::matmul_nt(a, b); }
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) { return omp::matmul_tn(a, b); }
inline Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y) { return omp::pairwise_sq_dist(x, y); }
inline Matrix gaussian_gram(const Matrix& x, const Matrix& y, double sigma) {
  return omp::gaussian_gram(x, y, sigma);
}
inline NearestResult nearest_rows(const Matrix& x, const Matrix& codes) {
  return omp::nearest_rows(x, codes);
}

/// Caps the worker count used by the `omp` kernels (0 = runtime default).
void set_max_threads(int n);
int max_threads();

}  // namespace mmq::kernels
