// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>

#include "mmq/diffkit/matrix.hpp"
#include "mmq/diffkit/mlp.hpp"

namespace mmq {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
/// name, so the set of parameters may differ between steps.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg);

  /// Applies one update to every parameter in `params` using its `grad`.
  /// Throws NumericError naming the first parameter with a non-finite gradient;
  /// nothing is modified in that case.
  void step(std::span<const ParamRef> params);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const noexcept { return cfg_.lr; }
  long steps() const noexcept { return t_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  AdamWConfig cfg_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace mmq
