// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"

namespace mmq::losses {

double median_pairwise_distance(const Matrix& sample) {
  if (sample.rows() < 2) throw InvalidArgument("median heuristic needs at least two samples");
  std::vector<double> d;
  d.reserve(sample.rows() * (sample.rows() - 1) / 2);
  for (std::size_t i = 0; i < sample.rows(); ++i)
    for (std::size_t j = i + 1; j < sample.rows(); ++j) d.push_back(std::sqrt(squared_distance(sample.row(i), sample.row(j))));
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(d.begin(), mid));
  }
  return med;
}

KernelConfig resolve_kernel(const KernelConfig& cfg, const Matrix& reference) {
  KernelConfig out = cfg;
  if (cfg.median_heuristic) {
    out.sigma = median_pairwise_distance(reference);
    out.median_heuristic = false;
    if (!(out.sigma > 0.0)) throw NumericError("median heuristic produced a zero bandwidth (duplicate samples)");
  }
  if (!(out.sigma > 0.0)) throw InvalidArgument("kernel bandwidth must be > 0");
  return out;
}

double gaussian_kernel(std::span<const double> x, std::span<const double> y, const KernelConfig& cfg) {
  if (!(cfg.sigma > 0.0) || cfg.median_heuristic) throw InvalidArgument("gaussian_kernel: sigma must be resolved and > 0");
  if (x.size() != y.size()) throw DimensionError("gaussian_kernel: dimension mismatch");
  return std::exp(-squared_distance(x, y) / (2.0 * cfg.sigma * cfg.sigma));
}

MmdEstimator parse_estimator(const std::string& name) {
  if (name == "biased") return MmdEstimator::kBiased;
  if (name == "unbiased") return MmdEstimator::kUnbiased;
  throw ConfigError("unknown MMD estimator '" + name + "' (expected biased|unbiased)");
}

namespace {

double total(const Matrix& m) {
  double s = 0.0;
  for (double v : m.flat()) s += v;
  return s;
}

double trace(const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) s += m(i, i);
  return s;
}

// out_i += coef · Σ_j K_ij (a_i − b_j)
void accumulate_kernel_pull(Matrix& out, const Matrix& k, const Matrix& a, const Matrix& b, double coef) {
  const Matrix kb = kernels::matmul(k, b);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double rs = 0.0;
    for (double v : k.row(i)) rs += v;
    auto dst = out.row(i);
    for (std::size_t c = 0; c < a.cols(); ++c) dst[c] += coef * (a(i, c) * rs - kb(i, c));
  }
}

}  // namespace

MmdResult mmd2(const Matrix& x, const Matrix& y, const KernelConfig& cfg, MmdEstimator estimator, bool with_grad) {
  if (x.cols() != y.cols()) throw DimensionError("mmd2: column mismatch " + x.shape_string() + " vs " + y.shape_string());
  if (x.rows() == 0 || y.rows() == 0) throw InvalidArgument("mmd2: empty sample");
  if (estimator == MmdEstimator::kUnbiased && (x.rows() < 2 || y.rows() < 2)) {
    throw InvalidArgument("mmd2: unbiased estimator needs at least two samples per side");
  }
  if (!(cfg.sigma > 0.0) || cfg.median_heuristic) throw InvalidArgument("mmd2: sigma must be resolved and > 0");

  const double n = static_cast<double>(x.rows());
  const double m = static_cast<double>(y.rows());
  const Matrix kxx = kernels::gaussian_gram(x, x, cfg.sigma);
  const Matrix kyy = kernels::gaussian_gram(y, y, cfg.sigma);
  const Matrix kxy = kernels::gaussian_gram(x, y, cfg.sigma);

  double cxx, cyy;
  double sxx = total(kxx), syy = total(kyy);
  if (estimator == MmdEstimator::kBiased) {
    cxx = 1.0 / (n * n);
    cyy = 1.0 / (m * m);
  } else {
    cxx = 1.0 / (n * (n - 1.0));
    cyy = 1.0 / (m * (m - 1.0));
    sxx -= trace(kxx);
    syy -= trace(kyy);
  }
  const double cxy = 1.0 / (n * m);

  MmdResult r;
  r.value = cxx * sxx + cyy * syy - 2.0 * cxy * total(kxy);
  if (!with_grad) return r;

  // ∂k(a, b)/∂a = −k(a, b)(a − b)/σ²
  const double inv_s2 = 1.0 / (cfg.sigma * cfg.sigma);
  r.grad_x = Matrix(x.rows(), x.cols());
  r.grad_y = Matrix(y.rows(), y.cols());
  accumulate_kernel_pull(r.grad_x, kxx, x, x, -2.0 * cxx * inv_s2);
  accumulate_kernel_pull(r.grad_x, kxy, x, y, 2.0 * cxy * inv_s2);
  accumulate_kernel_pull(r.grad_y, kyy, y, y, -2.0 * cyy * inv_s2);
  accumulate_kernel_pull(r.grad_y, kxy.transposed(), y, x, 2.0 * cxy * inv_s2);
  return r;
}

InfoNceResult info_nce(const Matrix& anchors, const Matrix& positives, double epsilon, bool with_grad) {
  if (!anchors.same_shape(positives)) {
    throw DimensionError("info_nce: shape mismatch " + anchors.shape_string() + " vs " + positives.shape_string());
  }
  if (anchors.rows() == 0) throw InvalidArgument("info_nce: empty batch");
  if (!(epsilon > 0.0)) throw InvalidArgument("info_nce: temperature must be > 0");

  const std::size_t b = anchors.rows(), d = anchors.cols();
  auto normalize = [&](const Matrix& m, const char* what, std::vector<double>& norms) {
    Matrix u(m.rows(), d);
    norms.resize(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const double nrm = std::sqrt(squared_norm(m.row(i)));
      if (!(nrm > 0.0)) throw NumericError(std::string("info_nce: zero-norm ") + what + " row " + std::to_string(i));
      norms[i] = nrm;
      for (std::size_t c = 0; c < d; ++c) u(i, c) = m(i, c) / nrm;
    }
    return u;
  };
  std::vector<double> na, np;
  const Matrix u = normalize(anchors, "anchor", na);
  const Matrix v = normalize(positives, "positive", np);
  Matrix logits = kernels::matmul_nt(u, v);
  logits *= 1.0 / epsilon;

  InfoNceResult r;
  Matrix dlogits(b, b);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double s : row) z += std::exp(s - mx);
    const double lse = mx + std::log(z);
    r.value += (lse - row[i]) * inv_b;
    for (std::size_t j = 0; j < b; ++j) dlogits(i, j) = (std::exp(row[j] - lse) - (i == j ? 1.0 : 0.0)) * inv_b;
  }
  if (!with_grad) return r;

  dlogits *= 1.0 / epsilon;
  const Matrix du = kernels::matmul(dlogits, v);
  const Matrix dv = kernels::matmul_tn(dlogits, u);
  // d(x/‖x‖) projects out the radial component
  auto through_norm = [d](const Matrix& unit, const Matrix& grad_unit, const std::vector<double>& norms) {
    Matrix g(unit.rows(), d);
    for (std::size_t i = 0; i < unit.rows(); ++i) {
      const double radial = dot(unit.row(i), grad_unit.row(i));
      for (std::size_t c = 0; c < d; ++c) g(i, c) = (grad_unit(i, c) - unit(i, c) * radial) / norms[i];
    }
    return g;
  };
  r.grad_anchors = through_norm(u, du, na);
  r.grad_positives = through_norm(v, dv, np);
  return r;
}

CommitmentResult rq_commitment_terms(std::span<const Matrix> residuals, std::span<const Matrix> codes,
                                     std::span<const Matrix> residuals_sg, std::span<const Matrix> codes_sg,
                                     double alpha) {
  const std::size_t levels = residuals.size();
  if (codes.size() != levels || residuals_sg.size() != levels || codes_sg.size() != levels) {
    throw DimensionError("rq_commitment_loss: level counts differ");
  }
  if (alpha < 0.0) throw InvalidArgument("rq_commitment_loss: alpha must be >= 0");
  CommitmentResult r;
  for (std::size_t l = 0; l < levels; ++l) {
    const Matrix& res = residuals[l];
    if (!res.same_shape(codes[l]) || !res.same_shape(residuals_sg[l]) || !res.same_shape(codes_sg[l])) {
      throw DimensionError("rq_commitment_loss: shape mismatch at level " + std::to_string(l));
    }
    if (res.rows() == 0) throw InvalidArgument("rq_commitment_loss: empty batch");
    const double inv_b = 1.0 / static_cast<double>(res.rows());
    Matrix gr(res.rows(), res.cols());
    Matrix gc(res.rows(), res.cols());
    for (std::size_t i = 0; i < res.size(); ++i) {
      const double a = residuals_sg[l].flat()[i] - codes[l].flat()[i];
      const double c = residuals[l].flat()[i] - codes_sg[l].flat()[i];
      r.codebook_term += a * a * inv_b;
      r.commitment_term += alpha * c * c * inv_b;
      gc.flat()[i] = -2.0 * a * inv_b;
      gr.flat()[i] = 2.0 * alpha * c * inv_b;
    }
    r.grad_residuals.push_back(std::move(gr));
    r.grad_codes.push_back(std::move(gc));
  }
  r.value = r.codebook_term + r.commitment_term;
  return r;
}

BceResult bce(std::span<const double> logits, std::span<const double> labels) {
  if (logits.size() != labels.size()) throw DimensionError("bce: logits and labels differ in length");
  if (logits.empty()) throw InvalidArgument("bce: empty input");
  BceResult r;
  r.grad.resize(logits.size());
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double s = logits[i], y = labels[i];
    if (y != 0.0 && y != 1.0) throw InvalidArgument("bce: label " + std::to_string(y) + " is not 0 or 1");
    r.value += (std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)))) * inv_n;
    const double sig = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
    r.grad[i] = (sig - y) * inv_n;
  }
  return r;
}

MseResult mse(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("mse: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  if (a.size() == 0) throw InvalidArgument("mse: empty input");
  MseResult r;
  r.grad_a = Matrix(a.rows(), a.cols());
  const double inv_n = 1.0 / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.flat()[i] - b.flat()[i];
    r.value += d * d * inv_n;
    r.grad_a.flat()[i] = 2.0 * d * inv_n;
  }
  return r;
}

}  // namespace mmq::losses
