// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"

namespace mmq::diag {

namespace {

// Column norms of A·V after orthogonalizing the columns of `a` (rows ≥ cols).
std::vector<double> jacobi_column_norms(Matrix a) {
  const std::size_t n = a.rows(), p = a.cols();
  constexpr double kEps = 1e-15;
  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < p; ++i) {
      for (std::size_t j = i + 1; j < p; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          const double x = a(r, i), y = a(r, j);
          alpha += x * x;
          beta += y * y;
          gamma += x * y;
        }
        if (gamma == 0.0 || std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < n; ++r) {
          const double x = a(r, i), y = a(r, j);
          a(r, i) = c * x - s * y;
          a(r, j) = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> norms(p);
  for (std::size_t c = 0; c < p; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += a(r, c) * a(r, c);
    norms[c] = std::sqrt(s);
  }
  return norms;
}

}  // namespace

SingularSpectrum singular_spectrum(const Matrix& m, std::string source) {
  if (!m.all_finite()) throw NumericError("singular_spectrum: matrix has non-finite entries");
  SingularSpectrum s;
  s.source = std::move(source);
  if (m.size() == 0) return s;
  s.values = m.rows() >= m.cols() ? jacobi_column_norms(m) : jacobi_column_norms(m.transposed());
  std::sort(s.values.begin(), s.values.end(), std::greater<>());
  s.normalized.resize(s.values.size(), 0.0);
  if (s.values[0] > 0.0) {
    for (std::size_t i = 0; i < s.values.size(); ++i) s.normalized[i] = s.values[i] / s.values[0];
  }
  return s;
}

std::size_t effective_rank(const SingularSpectrum& spec, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("effective_rank: threshold must lie in (0, 1)");
  return static_cast<std::size_t>(
      std::count_if(spec.normalized.begin(), spec.normalized.end(), [&](double v) { return v >= threshold; }));
}

double spectral_entropy(const SingularSpectrum& spec) {
  const double total = std::accumulate(spec.values.begin(), spec.values.end(), 0.0);
  if (!(total > 0.0)) return 0.0;
  double h = 0.0;
  for (double v : spec.values) {
    if (v > 0.0) h -= (v / total) * std::log(v / total);
  }
  return h;
}

std::size_t numeric_rank(const Matrix& m, double rel_tol) {
  const auto s = singular_spectrum(m);
  if (s.values.empty() || !(s.values[0] > 0.0)) return 0;
  return static_cast<std::size_t>(
      std::count_if(s.values.begin(), s.values.end(), [&](double v) { return v > rel_tol * s.values[0]; }));
}

CollapseReport collapse_report(const Matrix& m, double threshold, std::string source) {
  CollapseReport r;
  r.spectrum = singular_spectrum(m, std::move(source));
  r.threshold = threshold;
  r.effective_rank = effective_rank(r.spectrum, threshold);
  r.entropy = spectral_entropy(r.spectrum);
  r.dimensions = m.cols();
  return r;
}

RankBound rank_bound_check(const Matrix& e, const Matrix& w, const Matrix& b, double tol) {
  if (e.cols() != w.rows()) throw DimensionError("rank_bound_check: E " + e.shape_string() + " and W " + w.shape_string() + " do not compose");
  if (b.rows() != 1 || b.cols() != w.cols()) throw DimensionError("rank_bound_check: b must be 1×" + std::to_string(w.cols()));
  Matrix projected = kernels::matmul(e, w);
  add_row_broadcast(projected, b);
  RankBound r;
  r.lhs_rank = numeric_rank(projected, tol);
  r.rank_e = numeric_rank(e, tol);
  const bool zero_bias = std::all_of(b.flat().begin(), b.flat().end(), [](double v) { return v == 0.0; });
  r.rhs_bound = r.rank_e + (zero_bias ? 0 : 1);
  r.holds = r.lhs_rank <= r.rhs_bound;
  return r;
}

DistanceMetric parse_metric(const std::string& name) {
  if (name == "euclidean") return DistanceMetric::kEuclidean;
  if (name == "cosine") return DistanceMetric::kCosine;
  throw ConfigError("unknown distance metric '" + name + "' (expected euclidean|cosine)");
}

std::vector<double> DistanceProfile::distances() const {
  std::vector<double> d(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) d[i] = records[i].distance;
  return d;
}

DistanceProfile distance_profile(const Matrix& embeddings, const data::SplitDataset& dataset, DistanceMetric metric) {
  std::vector<std::size_t> order(dataset.users.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return dataset.users[x].user < dataset.users[y].user; });
  auto check = [&](std::uint32_t item) {
    if (item >= embeddings.rows()) throw InvalidArgument("distance_profile: no embedding for item " + std::to_string(item));
  };
  std::vector<std::size_t> offset(order.size() + 1, 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& u = dataset.users[order[k]];
    check(u.train_target);
    for (auto it : u.behavior) check(it);
    offset[k + 1] = offset[k] + u.behavior.size();
  }
  DistanceProfile p;
  p.records.resize(offset.back());
  const auto users = static_cast<std::ptrdiff_t>(order.size());
#pragma omp parallel for schedule(static) if (users > 512) num_threads(kernels::max_threads())
  for (std::ptrdiff_t k = 0; k < users; ++k) {
    const auto& u = dataset.users[order[static_cast<std::size_t>(k)]];
    const auto tgt = embeddings.row(u.train_target);
    for (std::size_t pos = 0; pos < u.behavior.size(); ++pos) {
      const auto beh = embeddings.row(u.behavior[pos]);
      double d;
      if (metric == DistanceMetric::kEuclidean) {
        d = std::sqrt(squared_distance(beh, tgt));
      } else {
        const double nb = std::sqrt(squared_norm(beh)), nt = std::sqrt(squared_norm(tgt));
        d = (nb > 0.0 && nt > 0.0) ? 1.0 - dot(beh, tgt) / (nb * nt) : 1.0;
      }
      p.records[offset[static_cast<std::size_t>(k)] + pos] = {u.user, pos, u.behavior[pos], u.train_target, d};
    }
  }
  return p;
}

namespace {

// Sorts `v` and returns the number of strictly decreasing pairs (i < j, v_i > v_j).
std::uint64_t merge_count(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size()), hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          swaps += mid - i;
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    v.swap(buf);
  }
  return swaps;
}

// Σ t(t−1)/2 over runs of equal values in a sorted sequence.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq eq) {
  std::uint64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && eq(i - 1, i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

}  // namespace

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("kendall_tau: lists differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw InvalidArgument("kendall_tau: need at least two observations");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) throw NumericError("kendall_tau: NaN input");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return a[x] < a[y] || (a[x] == a[y] && b[x] < b[y]); });
  const std::uint64_t ties_a = tied_pairs(n, [&](std::size_t i, std::size_t j) { return a[idx[i]] == a[idx[j]]; });
  const std::uint64_t ties_ab =
      tied_pairs(n, [&](std::size_t i, std::size_t j) { return a[idx[i]] == a[idx[j]] && b[idx[i]] == b[idx[j]]; });
  std::vector<double> bs(n);
  for (std::size_t i = 0; i < n; ++i) bs[i] = b[idx[i]];
  const std::uint64_t discordant = merge_count(bs);
  const std::uint64_t ties_b = tied_pairs(n, [&](std::size_t i, std::size_t j) { return bs[i] == bs[j]; });
  const std::uint64_t pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  // concordant + discordant = pairs − ties_a − ties_b + ties_ab
  const std::int64_t untied = static_cast<std::int64_t>(pairs - ties_a - ties_b + ties_ab);
  const std::int64_t numerator = untied - 2 * static_cast<std::int64_t>(discordant);
  const double denom = std::sqrt(static_cast<double>(pairs - ties_a) * static_cast<double>(pairs - ties_b));
  if (denom == 0.0) return 0.0;
  return static_cast<double>(numerator) / denom;
}

ForgettingReport forgetting_report(const DistanceProfile& reference, const DistanceProfile& updated) {
  if (reference.records.size() != updated.records.size()) {
    throw InvalidArgument("forgetting_report: profiles have " + std::to_string(reference.records.size()) + " and " +
                          std::to_string(updated.records.size()) + " records");
  }
  for (std::size_t i = 0; i < reference.records.size(); ++i) {
    const auto& x = reference.records[i];
    const auto& y = updated.records[i];
    if (x.user != y.user || x.position != y.position || x.behavior_item != y.behavior_item || x.target_item != y.target_item) {
      throw InvalidArgument("forgetting_report: profiles are misaligned at record " + std::to_string(i));
    }
  }
  ForgettingReport r;
  r.pairs = reference.records.size();
  r.tau = kendall_tau(reference.distances(), updated.distances());
  return r;
}

nlohmann::ordered_json to_json(const SingularSpectrum& spec) {
  nlohmann::ordered_json j;
  j["source"] = spec.source;
  j["values"] = spec.values;
  j["normalized"] = spec.normalized;
  return j;
}

nlohmann::ordered_json diagnostics_json(const CollapseReport& collapse, const ForgettingReport& forgetting) {
  nlohmann::ordered_json j;
  j["spectrum"] = collapse.spectrum.normalized;
  j["effective_rank"] = collapse.effective_rank;
  j["tau"] = forgetting.tau;
  j["pairs"] = forgetting.pairs;
  return j;
}

void write_spectrum_csv(const std::filesystem::path& path, const SingularSpectrum& spec) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "dimension_index,log10_normalized_sigma\n";
  char buf[64];
  for (std::size_t i = 0; i < spec.normalized.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, std::log10(spec.normalized[i]));
    out << buf;
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace mmq::diag
