// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mmq/diagnostics.hpp"
#include "mmq/diffkit/kernels.hpp"
#include "test_util.hpp"

using namespace mmq;
using namespace mmq::diag;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

// Tau-b by enumerating every pair.
double brute_tau(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  std::int64_t conc = 0, disc = 0;
  std::uint64_t ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0.0) ++ties_a;
      if (db == 0.0) ++ties_b;
      if (da == 0.0 || db == 0.0) continue;
      ((da > 0.0) == (db > 0.0) ? conc : disc) += 1;
    }
  const std::uint64_t pairs = n * (n - 1) / 2;
  const double denom = std::sqrt(static_cast<double>(pairs - ties_a) * static_cast<double>(pairs - ties_b));
  if (denom == 0.0) return 0.0;
  return static_cast<double>(conc - disc) / denom;
}

data::SplitDataset hand_dataset() {
  data::SplitDataset d;
  d.item_count = 5;
  d.users = {{0, {0, 1}, 2, 4}, {1, {3}, 0, 1}, {2, {4, 2, 1, 0}, 3, 2}};
  return d;
}

}  // namespace

TEST_CASE("singular spectrum examples") {
  const auto id = singular_spectrum(Matrix::identity(3));
  CHECK(id.values.size() == 3);
  for (double v : id.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  const Matrix u{{1.0}, {2.0}, {2.0}};
  const Matrix v{{3.0, 4.0}};
  Matrix outer(3, 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) outer(i, j) = u(i, 0) * v(0, j);
  const auto r1 = singular_spectrum(outer);
  CHECK(r1.values[0] == doctest::Approx(3.0 * 5.0).epsilon(1e-12));
  CHECK(std::abs(r1.values[1]) <= 1e-12);
  CHECK(effective_rank(r1, 0.5) == 1);
  CHECK(effective_rank(r1, 1e-9) == 1);

  const auto zero = singular_spectrum(Matrix(4, 3));
  for (double x : zero.normalized) CHECK(x == 0.0);
  CHECK(spectral_entropy(zero) == 0.0);
}

TEST_CASE("singular values agree with the Gram eigenvalue oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix m = rng.normal_matrix(20, 8);
    const auto spec = singular_spectrum(m, "random");
    const Eigen::MatrixXd e = to_eigen(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(e.transpose() * e);
    std::vector<double> eig(es.eigenvalues().data(), es.eigenvalues().data() + 8);
    std::sort(eig.rbegin(), eig.rend());
    REQUIRE(spec.values.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(spec.values[i] * spec.values[i] == doctest::Approx(eig[i]).epsilon(1e-8));
    for (std::size_t i = 1; i < 8; ++i) CHECK(spec.values[i] <= spec.values[i - 1]);
    CHECK(spec.source == "random");
  }
}

TEST_CASE("spectrum is invariant under transposition") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Matrix m = rng.normal_matrix(1 + rng.index(15), 1 + rng.index(15));
    const auto a = singular_spectrum(m), b = singular_spectrum(m.transposed());
    REQUIRE(a.values.size() == b.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i)
      CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-8 * std::max(1.0, a.values[0]));
  }
}

TEST_CASE("effective rank") {
  CHECK(effective_rank(singular_spectrum(Matrix::identity(5)), 1e-3) == 5);
  const Matrix d{{1.0, 0.0, 0.0}, {0.0, 0.5, 0.0}, {0.0, 0.0, 1e-6}};
  CHECK(effective_rank(singular_spectrum(d), 1e-3) == 2);
  CHECK_THROWS_AS(effective_rank(singular_spectrum(d), 0.0), InvalidArgument);
  CHECK_THROWS_AS(effective_rank(singular_spectrum(d), 1.0), InvalidArgument);
  const auto report = collapse_report(d, 1e-3, "d");
  CHECK(report.effective_rank == 2);
  CHECK(report.dimensions == 3);
  CHECK(report.effective_rank <= std::min<std::size_t>(3, 3));
  CHECK(spectral_entropy(singular_spectrum(Matrix::identity(4))) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("rank bound examples") {
  Rng rng(1);
  const Matrix e = test::planted_rank(300, 64, 4, rng);
  const Matrix w = rng.normal_matrix(64, 256);
  const Matrix b = rng.normal_matrix(1, 256);
  const auto with_bias = rank_bound_check(e, w, b, 1e-8);
  CHECK(with_bias.rank_e == 4);
  CHECK(with_bias.lhs_rank <= 5);
  CHECK(with_bias.rhs_bound == 5);
  CHECK(with_bias.holds);

  const auto no_bias = rank_bound_check(e, w, Matrix(1, 256), 1e-8);
  CHECK(no_bias.lhs_rank <= 4);
  CHECK(no_bias.rhs_bound == 4);

  const Matrix sq = rng.normal_matrix(12, 12);
  const Matrix inv = rng.normal_matrix(12, 12);
  const auto full = rank_bound_check(sq, inv, Matrix(1, 12), 1e-10);
  CHECK(full.lhs_rank == full.rank_e);
  CHECK(full.lhs_rank == 12);

  CHECK_THROWS_AS(rank_bound_check(e, rng.normal_matrix(3, 4), Matrix(1, 4), 1e-8), DimensionError);
  CHECK_THROWS_AS(rank_bound_check(e, w, Matrix(1, 3), 1e-8), DimensionError);
}

TEST_CASE("rank bound holds on random instances") {
  std::size_t holds = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    const std::size_t d = 2 + rng.index(40);
    const std::size_t r = 1 + rng.index(d);
    const std::size_t rows = d + rng.index(80);
    const Matrix e = test::planted_rank(rows, d, r, rng);
    const Matrix w = rng.normal_matrix(d, 1 + rng.index(96));
    const Matrix b = seed % 5 == 0 ? Matrix(1, w.cols()) : rng.normal_matrix(1, w.cols());
    const auto rb = rank_bound_check(e, w, b, 1e-8);
    holds += rb.holds;
    CHECK(rb.rank_e == std::min(r, rows));
  }
  CHECK(holds == 500);
}

TEST_CASE("distance profile") {
  const auto d = hand_dataset();
  const Matrix emb{{0.0, 0.0}, {3.0, 4.0}, {1.0, 0.0}, {0.0, 2.0}, {-1.0, -1.0}};
  const auto p = distance_profile(emb, d);
  REQUIRE(p.records.size() == 7);
  // user 0 → target 2: items 0, 1
  CHECK(p.records[0].distance == doctest::Approx(1.0));
  CHECK(p.records[1].distance == doctest::Approx(std::sqrt(4.0 + 16.0)));
  // user 1 → target 0: item 3
  CHECK(p.records[2].distance == doctest::Approx(2.0));
  CHECK(p.records[2].user == 1);
  // user 2 → target 3: items 4, 2, 1, 0
  CHECK(p.records[3].distance == doctest::Approx(std::sqrt(1.0 + 9.0)));
  CHECK(p.records[4].distance == doctest::Approx(std::sqrt(1.0 + 4.0)));
  CHECK(p.records[5].distance == doctest::Approx(std::sqrt(9.0 + 4.0)));
  CHECK(p.records[6].distance == doctest::Approx(2.0));
  CHECK(p.records[6].position == 3);
  CHECK(p.records[6].behavior_item == 0);
  CHECK(p.records[6].target_item == 3);

  Matrix same(5, 2);
  for (double v : distance_profile(same, d).distances()) CHECK(v == 0.0);

  try {
    distance_profile(Matrix(4, 2), d);
    FAIL("expected a missing-item error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("item 4") != std::string::npos);
  }
}

TEST_CASE("distance profile order does not depend on thread count") {
  Rng rng(3);
  data::SplitDataset d;
  d.item_count = 50;
  for (std::uint64_t u = 0; u < 300; ++u) {
    data::SplitUser su;
    su.user = u;
    for (std::size_t k = 0; k < 1 + rng.index(6); ++k) su.behavior.push_back(static_cast<std::uint32_t>(rng.index(50)));
    su.train_target = static_cast<std::uint32_t>(rng.index(50));
    d.users.push_back(su);
  }
  const Matrix emb = rng.normal_matrix(50, 4);
  kernels::set_max_threads(1);
  const auto a = distance_profile(emb, d, DistanceMetric::kCosine);
  kernels::set_max_threads(4);
  const auto b = distance_profile(emb, d, DistanceMetric::kCosine);
  kernels::set_max_threads(0);
  CHECK(a.distances() == b.distances());
  for (std::size_t i = 1; i < a.records.size(); ++i) {
    const auto& p = a.records[i - 1];
    const auto& q = a.records[i];
    CHECK((p.user < q.user || (p.user == q.user && p.position < q.position)));
  }
}

TEST_CASE("kendall tau examples") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  std::vector<double> rev(a.rbegin(), a.rend());
  CHECK(kendall_tau(a, a) == 1.0);
  CHECK(kendall_tau(a, rev) == -1.0);
  const std::vector<double> x{1, 2, 3}, y{1, 3, 2};
  CHECK(kendall_tau(x, y) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(kendall_tau(one, one), InvalidArgument);
  CHECK_THROWS_AS(kendall_tau(a, x), DimensionError);
  const std::vector<double> flat{2, 2, 2, 2, 2};
  CHECK(kendall_tau(a, flat) == 0.0);
}

TEST_CASE("fast tau equals brute-force tau-b") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.index(199);
    // a small value range forces ties in about half of the cases
    const std::size_t levels = seed % 2 ? 1 + rng.index(6) : 1'000'000;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<double>(rng.index(levels));
      b[i] = static_cast<double>(rng.index(levels));
    }
    CHECK(kendall_tau(a, b) == brute_tau(a, b));
  }
}

TEST_CASE("tau is invariant under increasing transforms") {
  Rng rng(5);
  std::vector<double> a(300), b(300);
  for (auto& v : a) v = rng.normal();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] + rng.normal();
  const double base = kendall_tau(a, b);
  std::vector<double> ta(a.size()), tb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ta[i] = std::exp(a[i]);
    tb[i] = 3.0 * b[i] * b[i] * b[i] + 1.0;
  }
  CHECK(kendall_tau(ta, b) == base);
  CHECK(kendall_tau(a, tb) == base);
  CHECK(kendall_tau(ta, tb) == base);
}

TEST_CASE("tau of independent lists is near zero") {
  std::size_t inside = 0;
  const std::size_t trials = 100;
  for (std::uint64_t seed = 0; seed < trials; ++seed) {
    Rng rng(seed);
    std::vector<double> a(10'000), b(10'000);
    for (auto& v : a) v = rng.uniform();
    for (auto& v : b) v = rng.uniform();
    inside += std::abs(kendall_tau(a, b)) < 0.05;
  }
  CHECK(inside >= 99);
}

TEST_CASE("forgetting report") {
  Rng rng(7);
  data::SplitDataset d = hand_dataset();
  const Matrix emb = rng.normal_matrix(5, 3);
  const auto ref = distance_profile(emb, d);
  const auto self = forgetting_report(ref, ref);
  CHECK(self.tau == 1.0);
  CHECK(self.pairs == ref.records.size());
  const auto scaled = forgetting_report(ref, distance_profile(emb * 2.0, d));
  CHECK(scaled.tau == 1.0);

  DistanceProfile shorter = ref;
  shorter.records.pop_back();
  CHECK_THROWS_AS(forgetting_report(ref, shorter), InvalidArgument);
  DistanceProfile swapped = ref;
  std::swap(swapped.records[0].user, swapped.records[3].user);
  CHECK_THROWS_AS(forgetting_report(ref, swapped), InvalidArgument);
}

TEST_CASE("json and csv output") {
  const Matrix d{{2.0, 0.0}, {0.0, 0.2}};
  const auto report = collapse_report(d, 1e-3, "toy");
  const auto j = diagnostics_json(report, {0.25, 12});
  CHECK(j["effective_rank"] == 2);
  CHECK(j["tau"] == 0.25);
  CHECK(j["pairs"] == 12);
  CHECK(j["spectrum"].size() == 2);
  CHECK(to_json(report.spectrum)["source"] == "toy");

  test::TempDir dir;
  write_spectrum_csv(dir / "s.csv", report.spectrum);
  std::ifstream in(dir / "s.csv");
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  CHECK(header == "dimension_index,log10_normalized_sigma");
  CHECK(row0 == "0,0");
  CHECK(row1.rfind("1,", 0) == 0);
  CHECK(std::stod(row1.substr(2)) == doctest::Approx(-1.0));
}

TEST_CASE("metric parsing") {
  CHECK(parse_metric("cosine") == DistanceMetric::kCosine);
  CHECK_THROWS_AS(parse_metric("manhattan"), ConfigError);
}
