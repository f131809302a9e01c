// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "mmq/diffkit/matrix.hpp"

// Transformer building blocks with explicit backward passes. Gradients are
// accumulated (+=) into caller-owned buffers; a null buffer skips that term.
namespace mmq::seqrec {

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise normalization with gain and bias (both 1 × cols).
Matrix layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache);
Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache, Matrix* dgain,
                           Matrix* dbias);

/// Low-rank update scale·x·A·B, with A (in × r) and B (r × out).
struct LoraView {
  const Matrix* a = nullptr;
  const Matrix* b = nullptr;
  double scale = 0.0;
  bool enabled() const { return a != nullptr && !a->empty(); }
};

struct LinearCache {
  Matrix x;
  Matrix xa;  // x·A when an adapter is present
};

/// y = x·W (+ bias when non-empty) (+ LoRA term when enabled).
Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& bias, const LoraView& lora, LinearCache& cache);
/// Returns dx.
Matrix linear_backward(const Matrix& dy, const Matrix& w, const LoraView& lora, const LinearCache& cache, Matrix* dw,
                       Matrix* dbias, Matrix* da, Matrix* db);

struct AttentionCache {
  std::size_t heads = 0;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, T × T, zero above the diagonal
};

/// Multi-head causal self-attention on already-projected q, k, v (T × D).
Matrix causal_attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                                AttentionCache& cache);
void causal_attention_backward(const Matrix& dout, const AttentionCache& cache, Matrix& dq, Matrix& dk, Matrix& dv);

}  // namespace mmq::seqrec
