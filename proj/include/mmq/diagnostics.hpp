// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmq/dataio.hpp"
#include "mmq/diffkit/matrix.hpp"

// Embedding-collapse and forgetting diagnostics.
namespace mmq::diag {

struct SingularSpectrum {
  std::vector<double> values;      // descending
  std::vector<double> normalized;  // σ_i / σ_1, all zero when σ_1 == 0
  std::string source;
};

/// Singular values by one-sided Jacobi on the smaller of the two dimensions.
SingularSpectrum singular_spectrum(const Matrix& m, std::string source = "");

/// Number of normalized singular values ≥ threshold; threshold must lie in (0, 1).
std::size_t effective_rank(const SingularSpectrum& spec, double threshold);

/// Shannon entropy of σ_i / Σσ (natural log); 0 for a zero matrix.
double spectral_entropy(const SingularSpectrum& spec);

/// Count of σ_i > rel_tol · σ_1.
std::size_t numeric_rank(const Matrix& m, double rel_tol);

struct CollapseReport {
  SingularSpectrum spectrum;
  double threshold = 1e-3;
  std::size_t effective_rank = 0;
  double entropy = 0.0;
  std::size_t dimensions = 0;
};

CollapseReport collapse_report(const Matrix& m, double threshold, std::string source = "");

struct RankBound {
  std::size_t lhs_rank = 0;   // rank(E·W + 1·b)
  std::size_t rank_e = 0;
  std::size_t rhs_bound = 0;  // rank(E) + 1, or rank(E) when b == 0
  bool holds = false;
};

/// Rows of E are items, W maps columns (D × D′), b is 1 × D′.
RankBound rank_bound_check(const Matrix& e, const Matrix& w, const Matrix& b, double tol);

enum class DistanceMetric { kEuclidean, kCosine };
DistanceMetric parse_metric(const std::string& name);

struct DistanceRecord {
  std::uint64_t user = 0;
  std::size_t position = 0;
  std::uint32_t behavior_item = 0;
  std::uint32_t target_item = 0;
  double distance = 0.0;
};

/// Records sorted by (user, behavioral position).
struct DistanceProfile {
  std::vector<DistanceRecord> records;
  std::vector<double> distances() const;
};

/// One record per behavioral item of each user, paired with that user's
/// training target. `embeddings` row i is item i.
DistanceProfile distance_profile(const Matrix& embeddings, const data::SplitDataset& dataset,
                                 DistanceMetric metric = DistanceMetric::kEuclidean);

/// Kendall tau-b; O(n log n). Returns 0 when either list is constant.
double kendall_tau(std::span<const double> a, std::span<const double> b);

struct ForgettingReport {
  double tau = 0.0;
  std::size_t pairs = 0;
};

ForgettingReport forgetting_report(const DistanceProfile& reference, const DistanceProfile& updated);

nlohmann::ordered_json to_json(const SingularSpectrum& spec);
nlohmann::ordered_json diagnostics_json(const CollapseReport& collapse, const ForgettingReport& forgetting);

/// Two columns: dimension_index, log10 of the normalized singular value.
void write_spectrum_csv(const std::filesystem::path& path, const SingularSpectrum& spec);

}  // namespace mmq::diag
