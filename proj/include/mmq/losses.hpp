// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmq/diffkit/matrix.hpp"

// Scalar training objectives with analytic gradients.
namespace mmq::losses {

/// Gaussian kernel k(x, y) = exp(-‖x − y‖² / 2σ²).
struct KernelConfig {
  double sigma = 1.0;
  /// When set, `sigma` is replaced by the median pairwise distance of a
  /// reference sample the first time the config is resolved.
  bool median_heuristic = false;
};

double median_pairwise_distance(const Matrix& sample);
/// Returns a config with a concrete bandwidth; throws if σ ≤ 0.
KernelConfig resolve_kernel(const KernelConfig& cfg, const Matrix& reference);

double gaussian_kernel(std::span<const double> x, std::span<const double> y, const KernelConfig& cfg);

enum class MmdEstimator { kBiased, kUnbiased };
MmdEstimator parse_estimator(const std::string& name);

/// Two sample sets with the same column count.
struct BatchPair {
  Matrix x;
  Matrix y;
};

struct MmdResult {
  double value = 0.0;
  Matrix grad_x;
  Matrix grad_y;
};

/// Squared MMD between the empirical distributions of x and y.
MmdResult mmd2(const Matrix& x, const Matrix& y, const KernelConfig& cfg, MmdEstimator estimator, bool with_grad = true);
inline MmdResult mmd2(const BatchPair& pair, const KernelConfig& cfg, MmdEstimator estimator) {
  return mmd2(pair.x, pair.y, cfg, estimator);
}

struct InfoNceResult {
  double value = 0.0;
  Matrix grad_anchors;
  Matrix grad_positives;
};

/// Mean over rows i of −log softmax_i(cos(a_i, p_·)/ε); rows i′ ≠ i of
/// `positives` act as in-batch negatives.
InfoNceResult info_nce(const Matrix& anchors, const Matrix& positives, double epsilon, bool with_grad = true);

struct CommitmentResult {
  double value = 0.0;
  double codebook_term = 0.0;    // Σ_l ‖SG(r_{l−1}) − CE_l‖²
  double commitment_term = 0.0;  // α Σ_l ‖r_{l−1} − SG(CE_l)‖²
  std::vector<Matrix> grad_residuals;
  std::vector<Matrix> grad_codes;
};

/// RQ-VAE quantization loss, averaged over rows. Level l pairs residual r_{l−1}
/// (rows = items) with the chosen code CE_{SID^l} for each item. The `*_sg`
/// arguments supply the values seen through the stop-gradient, so codes only
/// receive gradient from the first term and residuals only from the second.
CommitmentResult rq_commitment_terms(std::span<const Matrix> residuals, std::span<const Matrix> codes,
                                     std::span<const Matrix> residuals_sg, std::span<const Matrix> codes_sg,
                                     double alpha);

inline CommitmentResult rq_commitment_loss(std::span<const Matrix> residuals, std::span<const Matrix> codes,
                                           double alpha) {
  return rq_commitment_terms(residuals, codes, residuals, codes, alpha);
}

struct BceResult {
  double value = 0.0;
  std::vector<double> grad;  // d loss / d logit
};

/// Mean binary cross-entropy on logits, evaluated in the overflow-free form
/// max(s, 0) − s·y + log(1 + e^{−|s|}).
BceResult bce(std::span<const double> logits, std::span<const double> labels);

struct MseResult {
  double value = 0.0;
  Matrix grad_a;
};

/// Mean of squared elementwise differences; gradient w.r.t. `a`.
MseResult mse(const Matrix& a, const Matrix& b);

}  // namespace mmq::losses
