// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "mmq/diffkit/mlp.hpp"

namespace mmq {

/// Evaluates the loss at the current parameter values. When `with_grad` is
/// true it must also overwrite every ParamRef::grad with the analytic gradient.
using LossFn = std::function<double(bool with_grad)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Lower bound on the relative-error denominator |numeric|.
  double denominator_floor = 1e-12;
  /// When nonzero, only this many entries (sampled uniformly) are perturbed.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  /// When set, each entry is also differenced with 4 × step. Entries whose two
  /// numeric estimates differ by more than `resolve_tol` (relative) straddle a
  /// non-differentiable point; entries whose step-h loss difference is within
  /// 4 ulps / resolve_tol of the loss sit below round-off. Both are counted in
  /// `unresolved` and left out of `max_rel_error`.
  bool skip_unresolved = false;
  double resolve_tol = 1e-5;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  std::size_t unresolved = 0;
};

/// Central-difference comparison of analytic and numeric gradients. The
/// relative error of an entry is |analytic − numeric| / max(floor, |numeric|).
/// Parameter values are restored on return.
GradCheckResult grad_check(const LossFn& loss_fn, std::span<const ParamRef> params, const GradCheckOptions& opts);

inline double grad_check(const LossFn& loss_fn, std::span<const ParamRef> params, double step) {
  GradCheckOptions o;
  o.step = step;
  return grad_check(loss_fn, params, o).max_rel_error;
}

}  // namespace mmq
