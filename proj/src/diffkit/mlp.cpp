// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/diffkit/mlp.hpp"

#include <cmath>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"

namespace mmq {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "' (expected relu|identity)");
}

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "identity"; }

MlpParams MlpParams::create(std::span<const std::size_t> dims, std::span<const Activation> activations, Rng& rng) {
  if (dims.size() < 2 || activations.size() + 1 != dims.size()) {
    throw InvalidArgument("MlpParams::create: need dims.size() == activations.size() + 1 >= 2");
  }
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double gain = activations[l] == Activation::kRelu ? 2.0 : 1.0;
    DenseLayer layer;
    layer.weight = rng.normal_matrix(dims[l], dims[l + 1], std::sqrt(gain / static_cast<double>(dims[l])));
    layer.bias = Matrix(1, dims[l + 1]);
    layer.activation = activations[l];
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::vector<std::size_t> MlpParams::dims() const {
  std::vector<std::size_t> d;
  if (layers.empty()) return d;
  d.push_back(layers.front().weight.rows());
  for (const auto& l : layers) d.push_back(l.weight.cols());
  return d;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

GradStore GradStore::zeros_like(const MlpParams& params) {
  GradStore g;
  for (const auto& l : params.layers) {
    g.weight.emplace_back(l.weight.rows(), l.weight.cols());
    g.bias.emplace_back(l.bias.rows(), l.bias.cols());
  }
  return g;
}

void GradStore::zero() {
  for (auto& m : weight) m.fill(0.0);
  for (auto& m : bias) m.fill(0.0);
  input = Matrix();
}

GradStore& GradStore::operator+=(const GradStore& other) {
  if (weight.size() != other.weight.size()) throw DimensionError("GradStore += layer count mismatch");
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += other.weight[l];
    bias[l] += other.bias[l];
  }
  if (input.empty()) {
    input = other.input;
  } else if (!other.input.empty()) {
    input += other.input;
  }
  return *this;
}

namespace {

void check_input(const MlpParams& params, const Matrix& input) {
  if (params.layers.empty()) throw InvalidArgument("mlp has no layers");
  if (input.cols() != params.input_dim()) {
    throw DimensionError("mlp layer 0 expects input dim " + std::to_string(params.input_dim()) + ", got " +
                         std::to_string(input.cols()));
  }
}

void activate(Matrix& m, Activation a) {
  if (a == Activation::kRelu) {
    for (double& v : m.flat()) v = v > 0.0 ? v : 0.0;
  }
}

}  // namespace

MlpForward mlp_forward(const MlpParams& params, const Matrix& input) {
  check_input(params, input);
  MlpForward out;
  out.cache.owner = &params;
  Matrix x = input;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    if (x.cols() != layer.weight.rows()) {
      throw DimensionError("mlp layer " + std::to_string(l) + " expects input dim " +
                           std::to_string(layer.weight.rows()) + ", got " + std::to_string(x.cols()));
    }
    Matrix pre = kernels::matmul(x, layer.weight);
    add_row_broadcast(pre, layer.bias);
    out.cache.inputs.push_back(std::move(x));
    Matrix post = pre;
    activate(post, layer.activation);
    out.cache.preactivations.push_back(std::move(pre));
    x = std::move(post);
  }
  out.output = std::move(x);
  return out;
}

Matrix mlp_apply(const MlpParams& params, const Matrix& input) {
  check_input(params, input);
  Matrix x = input;
  for (const auto& layer : params.layers) {
    Matrix pre = kernels::matmul(x, layer.weight);
    add_row_broadcast(pre, layer.bias);
    activate(pre, layer.activation);
    x = std::move(pre);
  }
  return x;
}

GradStore mlp_backward(const MlpParams& params, const MlpCache& cache, const Matrix& upstream) {
  if (cache.owner != &params || cache.inputs.size() != params.layers.size()) {
    throw InvalidArgument("mlp_backward: cache was not produced by this parameter set");
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (cache.inputs[l].cols() != params.layers[l].weight.rows() ||
        cache.preactivations[l].cols() != params.layers[l].weight.cols()) {
      throw InvalidArgument("mlp_backward: stale cache at layer " + std::to_string(l));
    }
  }
  const std::size_t batch = cache.inputs.front().rows();
  if (upstream.rows() != batch || upstream.cols() != params.output_dim()) {
    throw DimensionError("mlp_backward: upstream gradient " + upstream.shape_string() + " does not match output " +
                         std::to_string(batch) + "x" + std::to_string(params.output_dim()));
  }

  GradStore g = GradStore::zeros_like(params);
  Matrix delta = upstream;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& layer = params.layers[li];
    if (layer.activation == Activation::kRelu) {
      const auto pre = cache.preactivations[li].flat();
      auto d = delta.flat();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (pre[i] <= 0.0) d[i] = 0.0;
      }
    }
    g.weight[li] = kernels::matmul_tn(cache.inputs[li], delta);
    g.bias[li] = column_sums(delta);
    delta = kernels::matmul_nt(delta, layer.weight);
  }
  g.input = std::move(delta);
  return g;
}

void append_mlp_params(std::vector<ParamRef>& out, const std::string& prefix, MlpParams& params, GradStore& grads) {
  if (grads.weight.size() != params.layers.size()) grads = GradStore::zeros_like(params);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    out.push_back({prefix + "/" + std::to_string(l) + "/weight", &params.layers[l].weight, &grads.weight[l]});
    out.push_back({prefix + "/" + std::to_string(l) + "/bias", &params.layers[l].bias, &grads.bias[l]});
  }
}

}  // namespace mmq
