// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/seqrec/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"

namespace mmq::seqrec {

Matrix layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.cols() != d || bias.cols() != d) throw DimensionError("layer_norm: parameter width mismatch");
  cache.xhat = Matrix(n, d);
  cache.inv_std.assign(n, 0.0);
  Matrix y(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (double v : x.row(i)) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x.row(i)) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std[i] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (x(i, c) - mu) * inv;
      cache.xhat(i, c) = xh;
      y(i, c) = gain(0, c) * xh + bias(0, c);
    }
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache, Matrix* dgain,
                           Matrix* dbias) {
  const std::size_t n = dy.rows(), d = dy.cols();
  Matrix dx(n, d);
  std::vector<double> dxh(d);
  for (std::size_t i = 0; i < n; ++i) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double g = dy(i, c);
      if (dgain) (*dgain)(0, c) += g * cache.xhat(i, c);
      if (dbias) (*dbias)(0, c) += g;
      dxh[c] = g * gain(0, c);
      m1 += dxh[c];
      m2 += dxh[c] * cache.xhat(i, c);
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) dx(i, c) = cache.inv_std[i] * (dxh[c] - m1 - cache.xhat(i, c) * m2);
  }
  return dx;
}

Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& bias, const LoraView& lora, LinearCache& cache) {
  if (x.cols() != w.rows()) throw DimensionError("linear: input " + x.shape_string() + " vs weight " + w.shape_string());
  cache.x = x;
  Matrix y = kernels::matmul(x, w);
  if (!bias.empty()) add_row_broadcast(y, bias);
  if (lora.enabled()) {
    cache.xa = kernels::matmul(x, *lora.a);
    Matrix delta = kernels::matmul(cache.xa, *lora.b);
    delta *= lora.scale;
    y += delta;
  }
  return y;
}

Matrix linear_backward(const Matrix& dy, const Matrix& w, const LoraView& lora, const LinearCache& cache, Matrix* dw,
                       Matrix* dbias, Matrix* da, Matrix* db) {
  if (dw) *dw += kernels::matmul_tn(cache.x, dy);
  if (dbias) *dbias += column_sums(dy);
  Matrix dx = kernels::matmul_nt(dy, w);
  if (lora.enabled()) {
    Matrix dxa = kernels::matmul_nt(dy, *lora.b);
    dxa *= lora.scale;
    if (db) {
      Matrix g = kernels::matmul_tn(cache.xa, dy);
      g *= lora.scale;
      *db += g;
    }
    if (da) *da += kernels::matmul_tn(cache.x, dxa);
    dx += kernels::matmul_nt(dxa, *lora.a);
  }
  return dx;
}

Matrix causal_attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                                AttentionCache& cache) {
  const std::size_t t = q.rows(), d = q.cols();
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by head count");
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.heads = heads;
  cache.q = q;
  cache.k = k;
  cache.v = v;
  cache.probs.assign(heads, Matrix(t, t));
  Matrix out(t, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix& p = cache.probs[h];
    for (std::size_t i = 0; i < t; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
        p(i, j) = s * scale;
        mx = std::max(mx, p(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        p(i, j) = std::exp(p(i, j) - mx);
        z += p(i, j);
      }
      for (std::size_t j = 0; j <= i; ++j) {
        p(i, j) /= z;
        for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += p(i, j) * v(j, off + c);
      }
    }
  }
  return out;
}

void causal_attention_backward(const Matrix& dout, const AttentionCache& cache, Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t t = cache.q.rows(), d = cache.q.cols(), dh = d / cache.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Matrix(t, d);
  dk = Matrix(t, d);
  dv = Matrix(t, d);
  std::vector<double> dp(t);
  for (std::size_t h = 0; h < cache.heads; ++h) {
    const std::size_t off = h * dh;
    const Matrix& p = cache.probs[h];
    for (std::size_t i = 0; i < t; ++i) {
      double dot_pd = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          s += dout(i, off + c) * cache.v(j, off + c);
          dv(j, off + c) += p(i, j) * dout(i, off + c);
        }
        dp[j] = s;
        dot_pd += p(i, j) * s;
      }
      for (std::size_t j = 0; j <= i; ++j) {
        const double ds = p(i, j) * (dp[j] - dot_pd) * scale;
        for (std::size_t c = 0; c < dh; ++c) {
          dq(i, off + c) += ds * cache.k(j, off + c);
          dk(j, off + c) += ds * cache.q(i, off + c);
        }
      }
    }
  }
}

}  // namespace mmq::seqrec
