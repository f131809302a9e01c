// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grad_suites.hpp"
#include "mmq/diffkit/error.hpp"
#include "mmq/losses.hpp"

using namespace mmq;
using namespace mmq::losses;

namespace {

// Rows of Q from a Gram-Schmidt pass over a random square matrix.
Matrix random_orthonormal(std::size_t n, Rng& rng) {
  Matrix q = rng.normal_matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double p = dot(q.row(i), q.row(j));
      for (std::size_t c = 0; c < n; ++c) q(i, c) -= p * q(j, c);
    }
    const double nrm = std::sqrt(squared_norm(q.row(i)));
    for (std::size_t c = 0; c < n; ++c) q(i, c) /= nrm;
  }
  return q;
}

}  // namespace

TEST_CASE("gaussian kernel") {
  const KernelConfig unit{1.0, false};
  const double x[] = {1.0}, y[] = {0.0};
  CHECK(gaussian_kernel(x, x, unit) == 1.0);
  CHECK(gaussian_kernel(x, y, unit) == doctest::Approx(0.606531).epsilon(1e-6));
  CHECK(gaussian_kernel(x, y, unit) == gaussian_kernel(y, x, unit));
  double prev = 0.0;
  for (double s : {0.5, 1.0, 2.0, 10.0, 100.0}) {
    const double v = gaussian_kernel(x, y, {s, false});
    CHECK(v > prev);
    CHECK(v <= 1.0);
    prev = v;
  }
  CHECK(prev > 0.9999);
  CHECK_THROWS_AS(gaussian_kernel(x, y, {0.0, false}), InvalidArgument);
  const double z[] = {1.0, 2.0};
  CHECK_THROWS_AS(gaussian_kernel(x, z, unit), DimensionError);
}

TEST_CASE("median heuristic") {
  const Matrix s{{0.0}, {1.0}, {3.0}};
  // distances 1, 3, 2
  CHECK(median_pairwise_distance(s) == doctest::Approx(2.0));
  const auto k = resolve_kernel({1.0, true}, s);
  CHECK_FALSE(k.median_heuristic);
  CHECK(k.sigma == doctest::Approx(2.0));
  CHECK_THROWS_AS(resolve_kernel({1.0, true}, Matrix{{1.0}, {1.0}}), NumericError);
}

TEST_CASE("mmd2 examples") {
  const KernelConfig unit{1.0, false};
  Rng rng(2);
  const Matrix x = rng.normal_matrix(5, 3);
  CHECK(std::abs(mmd2(x, x, unit, MmdEstimator::kBiased).value) <= 1e-12);
  CHECK(mmd2(Matrix{{1.0}}, Matrix{{0.0}}, unit, MmdEstimator::kBiased).value ==
        doctest::Approx(0.786939).epsilon(1e-6));
  CHECK_THROWS_AS(mmd2(Matrix{{1.0}}, Matrix{{0.0}, {1.0}}, unit, MmdEstimator::kUnbiased), InvalidArgument);
  CHECK_THROWS_AS(mmd2(Matrix{{1.0}}, Matrix{{0.0, 1.0}}, unit, MmdEstimator::kBiased), DimensionError);
  CHECK(parse_estimator("unbiased") == MmdEstimator::kUnbiased);
  CHECK_THROWS_AS(parse_estimator("linear"), ConfigError);
}

TEST_CASE("biased mmd2 is non-negative and symmetric") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const std::size_t d = 1 + rng.index(5);
    const Matrix x = rng.normal_matrix(1 + rng.index(8), d);
    const Matrix y = rng.normal_matrix(1 + rng.index(8), d, rng.uniform(0.2, 3.0));
    const KernelConfig k{rng.uniform(0.3, 3.0), false};
    const double xy = mmd2(x, y, k, MmdEstimator::kBiased).value;
    const double yx = mmd2(y, x, k, MmdEstimator::kBiased).value;
    CHECK(xy >= 0.0);
    CHECK(xy == doctest::Approx(yx).epsilon(1e-12));
  }
}

TEST_CASE("unbiased mmd2 has mean zero for identical distributions") {
  std::vector<double> v;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(10'000 + seed);
    const Matrix x = rng.normal_matrix(8, 2), y = rng.normal_matrix(8, 2);
    v.push_back(mmd2(x, y, {1.0, false}, MmdEstimator::kUnbiased, false).value);
  }
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  const double se = std::sqrt(var / (n - 1.0) / n);
  CHECK(std::abs(mean) <= 3.0 * se);
}

TEST_CASE("info_nce examples") {
  Rng rng(3);
  const Matrix a = rng.normal_matrix(1, 4);
  CHECK(info_nce(a, rng.normal_matrix(1, 4), 0.5).value == doctest::Approx(0.0).epsilon(1e-12));
  const Matrix e{{1.0, 0.0}, {0.0, 1.0}};
  CHECK(info_nce(e, e, 1.0).value == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK(info_nce(e, e, 1.0).value == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))));
  CHECK_THROWS_AS(info_nce(Matrix{{0.0, 0.0}, {1.0, 0.0}}, e, 1.0), NumericError);
  CHECK_THROWS_AS(info_nce(e, e, 0.0), InvalidArgument);
  CHECK_THROWS_AS(info_nce(e, Matrix{{1.0, 0.0}}, 1.0), DimensionError);
}

TEST_CASE("info_nce prefers aligned positives") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t b = 2 + rng.index(6);
    const Matrix q = random_orthonormal(b, rng);
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    // cyclic shift: a derangement, so no row keeps its positive
    std::rotate(perm.begin(), perm.begin() + 1, perm.end());
    const Matrix shuffled = q.gather_rows(perm);
    CHECK(info_nce(q, shuffled, 0.5).value > info_nce(q, q, 0.5).value);
  }
}

TEST_CASE("info_nce decreases as positives move toward anchors") {
  Rng rng(11);
  const Matrix a = rng.normal_matrix(6, 5);
  const Matrix r = rng.normal_matrix(6, 5);
  double prev = std::numeric_limits<double>::infinity();
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const Matrix p = r * (1.0 - t) + a * t;
    const double v = info_nce(a, p, 0.2).value;
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("commitment loss examples") {
  const std::vector<Matrix> r{Matrix{{1.0, 0.0}}};
  const std::vector<Matrix> c{Matrix{{0.0, 0.0}}};
  const auto res = rq_commitment_loss(r, c, 1.0);
  CHECK(res.value == doctest::Approx(2.0));
  CHECK(res.codebook_term == doctest::Approx(1.0));
  CHECK(res.commitment_term == doctest::Approx(1.0));
  CHECK(rq_commitment_loss(r, r, 0.7).value == 0.0);
  const auto zero_alpha = rq_commitment_loss(r, c, 0.0);
  CHECK(zero_alpha.grad_residuals[0] == Matrix(1, 2));
  CHECK_THROWS_AS(rq_commitment_loss(r, std::vector<Matrix>{}, 1.0), DimensionError);
  CHECK_THROWS_AS(rq_commitment_loss(r, std::vector<Matrix>{Matrix(1, 3)}, 1.0), DimensionError);
  CHECK_THROWS_AS(rq_commitment_loss(r, c, -1.0), InvalidArgument);
}

TEST_CASE("commitment stop-gradient isolation") {
  Rng rng(5);
  std::vector<Matrix> res{rng.normal_matrix(3, 2), rng.normal_matrix(3, 2)};
  std::vector<Matrix> codes{rng.normal_matrix(3, 2), rng.normal_matrix(3, 2)};
  const std::vector<Matrix> res_sg = res, codes_sg = codes;
  const auto base = rq_commitment_terms(res, codes, res_sg, codes_sg, 0.8);
  const double h = 1e-3;

  auto perturbed_codes = codes;
  perturbed_codes[1](2, 0) += h;
  const auto pc = rq_commitment_terms(res, perturbed_codes, res_sg, codes_sg, 0.8);
  CHECK(pc.codebook_term != base.codebook_term);
  CHECK(pc.commitment_term == base.commitment_term);

  auto perturbed_res = res;
  perturbed_res[0](1, 1) += h;
  const auto pr = rq_commitment_terms(perturbed_res, codes, res_sg, codes_sg, 0.8);
  CHECK(pr.codebook_term == base.codebook_term);
  CHECK(pr.commitment_term != base.commitment_term);
}

TEST_CASE("bce examples") {
  const double zero[] = {0.0}, pos[] = {20.0}, one[] = {1.0};
  CHECK(bce(zero, one).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double v = bce(pos, one).value;
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(2.06e-9).epsilon(1e-2));
  const double confident[] = {20.0, -20.0}, labels[] = {1.0, 0.0};
  CHECK(bce(confident, labels).value < 1e-8);
  const double huge[] = {1e4, -1e4};
  const double wrong[] = {0.0, 1.0};
  const auto h = bce(huge, wrong);
  CHECK(std::isfinite(h.value));
  CHECK(h.value == doctest::Approx(1e4));
  const double bad[] = {0.5};
  CHECK_THROWS_AS(bce(zero, bad), InvalidArgument);
  CHECK_THROWS_AS(bce(zero, labels), DimensionError);
}

TEST_CASE("mse examples") {
  CHECK(mse(Matrix{{1.0, 2.0}}, Matrix{{0.0, 0.0}}).value == doctest::Approx(2.5));
  Rng rng(8);
  const Matrix a = rng.normal_matrix(3, 4), b = rng.normal_matrix(3, 4);
  CHECK(mse(a, a).value == 0.0);
  CHECK(mse(a * 3.0, b * 3.0).value == doctest::Approx(9.0 * mse(a, b).value).epsilon(1e-12));
  CHECK_THROWS_AS(mse(a, Matrix(4, 3)), DimensionError);
}

TEST_CASE("loss gradients match central differences") {
  for (const auto& s : {test::grad_suite_mmd(100), test::grad_suite_info_nce(100), test::grad_suite_commitment(100),
                        test::grad_suite_bce(100), test::grad_suite_mse(100)}) {
    INFO(s.name << " worst " << s.worst << " unresolved " << s.unresolved << "/" << s.checked);
    CHECK(s.instances == 100);
    CHECK(s.worst <= 1e-4);
    CHECK(s.unresolved_fraction() <= 0.01);
  }
}
