// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"

namespace mmq::kernels::serial {

namespace {
void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}
}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  Matrix c(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += ari * b(r, j);
    }
  }
  return c;
}

Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y) {
  require(x.cols() == y.cols(), "pairwise_sq_dist", x, y);
  Matrix d(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < y.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) {
        const double t = x(i, k) - y(j, k);
        s += t * t;
      }
      d(i, j) = s;
    }
  }
  return d;
}

Matrix gaussian_gram(const Matrix& x, const Matrix& y, double sigma) {
  Matrix k = pairwise_sq_dist(x, y);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (double& v : k.flat()) v = std::exp(-v * inv);
  return k;
}

NearestResult nearest_rows(const Matrix& x, const Matrix& codes) {
  require(x.cols() == codes.cols(), "nearest_rows", x, codes);
  if (codes.rows() == 0) throw InvalidArgument("nearest_rows: empty codebook");
  NearestResult out{std::vector<std::size_t>(x.rows()), std::vector<double>(x.rows())};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::size_t best = 0;
    double best_d = 0.0;
    for (std::size_t j = 0; j < codes.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) {
        const double t = x(i, k) - codes(j, k);
        s += t * t;
      }
      if (j == 0 || s < best_d) {
        best = j;
        best_d = s;
      }
    }
    out.index[i] = best;
    out.sq_distance[i] = best_d;
  }
  return out;
}

}  // namespace mmq::kernels::serial
