// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmq/diffkit/matrix.hpp"
#include "mmq/diffkit/rng.hpp"

namespace mmq {

enum class Activation { kRelu, kIdentity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// y = act(x·weight + bias); weight is (in × out), bias is (1 × out).
struct DenseLayer {
  Matrix weight;
  Matrix bias;
  Activation activation = Activation::kIdentity;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  /// He-normal weights for relu layers, LeCun-normal otherwise; zero biases.
  /// `dims` has one more entry than `activations`.
  static MlpParams create(std::span<const std::size_t> dims, std::span<const Activation> activations, Rng& rng);

  std::size_t input_dim() const { return layers.front().weight.rows(); }
  std::size_t output_dim() const { return layers.back().weight.cols(); }
  std::vector<std::size_t> dims() const;
  std::size_t parameter_count() const;
};

/// Activations recorded by mlp_forward; tied to the parameter object that produced them.
struct MlpCache {
  const MlpParams* owner = nullptr;
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> preactivations;
};

/// One gradient per parameter matrix plus the gradient w.r.t. the MLP input.
struct GradStore {
  std::vector<Matrix> weight;
  std::vector<Matrix> bias;
  Matrix input;

  static GradStore zeros_like(const MlpParams& params);
  void zero();
  GradStore& operator+=(const GradStore& other);
};

struct MlpForward {
  Matrix output;
  MlpCache cache;
};

MlpForward mlp_forward(const MlpParams& params, const Matrix& input);
/// Forward pass without keeping a cache.
Matrix mlp_apply(const MlpParams& params, const Matrix& input);
GradStore mlp_backward(const MlpParams& params, const MlpCache& cache, const Matrix& upstream);

/// Named view of a trainable matrix and its gradient buffer.
struct ParamRef {
  std::string name;
  Matrix* value = nullptr;
  Matrix* grad = nullptr;
};

void append_mlp_params(std::vector<ParamRef>& out, const std::string& prefix, MlpParams& params, GradStore& grads);

}  // namespace mmq
