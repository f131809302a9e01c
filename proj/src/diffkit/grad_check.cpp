// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/diffkit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/rng.hpp"

namespace mmq {

namespace {
double checked(double v, const char* where) {
  if (!std::isfinite(v)) throw NumericError(std::string("grad_check: non-finite loss ") + where);
  return v;
}
}  // namespace

GradCheckResult grad_check(const LossFn& loss_fn, std::span<const ParamRef> params, const GradCheckOptions& opts) {
  if (!(opts.step > 0.0)) throw InvalidArgument("grad_check: step must be > 0");

  checked(loss_fn(true), "at base point");
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(*p.grad);

  // (param, entry) pairs to probe
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    for (std::size_t e = 0; e < params[pi].value->size(); ++e) entries.emplace_back(pi, e);
  if (opts.max_entries > 0 && entries.size() > opts.max_entries) {
    Rng rng(opts.seed);
    std::shuffle(entries.begin(), entries.end(), rng.engine());
    entries.resize(opts.max_entries);
    std::sort(entries.begin(), entries.end());
  }

  GradCheckResult res;
  for (auto [pi, e] : entries) {
    double& w = params[pi].value->flat()[e];
    const double orig = w;
    w = orig + opts.step;
    const double up = checked(loss_fn(false), "at +step");
    w = orig - opts.step;
    const double down = checked(loss_fn(false), "at -step");
    w = orig;
    const double numeric = (up - down) / (2.0 * opts.step);
    if (opts.skip_unresolved) {
      const double h = opts.step * 4.0;
      w = orig + h;
      const double up_q = checked(loss_fn(false), "at +4 step");
      w = orig - h;
      const double down_q = checked(loss_fn(false), "at -4 step");
      w = orig;
      const double numeric_q = (up_q - down_q) / (2.0 * h);
      const double spread = std::abs(numeric - numeric_q) / std::max(opts.denominator_floor, std::abs(numeric));
      // relative precision the step-h difference can carry given one ulp of the loss
      const double ulp = std::numeric_limits<double>::epsilon() * std::max(std::abs(up), std::abs(down));
      const double floor = 4.0 * ulp / std::max(std::abs(up - down), std::numeric_limits<double>::min());
      const bool exact_zero = up == down && analytic[pi].flat()[e] == 0.0;
      if (spread > opts.resolve_tol || (floor > opts.resolve_tol && !exact_zero)) {
        ++res.unresolved;
        continue;
      }
    }
    const double an = analytic[pi].flat()[e];
    const double rel = std::abs(an - numeric) / std::max(opts.denominator_floor, std::abs(numeric));
    ++res.entries_checked;
    if (rel > res.max_rel_error || res.entries_checked == 1) {
      res.max_rel_error = rel;
      res.worst_param = params[pi].name;
      res.worst_index = e;
      res.worst_analytic = an;
      res.worst_numeric = numeric;
    }
  }
  // leave the analytic gradient in place for callers
  for (std::size_t pi = 0; pi < params.size(); ++pi) *params[pi].grad = analytic[pi];
  return res;
}

}  // namespace mmq
