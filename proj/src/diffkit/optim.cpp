// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/diffkit/optim.hpp"

#include <cmath>

#include "mmq/diffkit/error.hpp"

namespace mmq {

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw InvalidArgument("AdamW: learning rate must be > 0");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw InvalidArgument("AdamW: betas must lie in [0, 1)");
  }
}

void AdamW::step(std::span<const ParamRef> params) {
  for (const auto& p : params) {
    if (p.value == nullptr || p.grad == nullptr) throw InvalidArgument("AdamW: null parameter '" + p.name + "'");
    if (!p.value->same_shape(*p.grad)) {
      throw DimensionError("AdamW: gradient shape " + p.grad->shape_string() + " != parameter shape " +
                           p.value->shape_string() + " for '" + p.name + "'");
    }
    if (!p.grad->all_finite()) throw NumericError("AdamW: non-finite gradient in parameter '" + p.name + "'");
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& p : params) {
    auto [it, inserted] = state_.try_emplace(p.name);
    Moments& mo = it->second;
    if (inserted || !mo.m.same_shape(*p.value)) {
      mo.m = Matrix(p.value->rows(), p.value->cols());
      mo.v = Matrix(p.value->rows(), p.value->cols());
    }
    auto w = p.value->flat();
    const auto g = p.grad->flat();
    auto m = mo.m.flat();
    auto v = mo.v.flat();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

}  // namespace mmq
