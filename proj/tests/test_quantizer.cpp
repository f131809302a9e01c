// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "grad_suites.hpp"
#include "mmq/diffkit/error.hpp"
#include "mmq/quantizer.hpp"
#include "test_util.hpp"

using namespace mmq;
using namespace mmq::rq;

namespace {

QuantizerConfig tiny_config() {
  QuantizerConfig c;
  c.codes = {8, 8, 8};
  c.levels = {2, 2, 2};
  c.code_dim = 4;
  c.hidden_dim = 12;
  c.epochs = 15;
  c.batch_size = 32;
  c.seed = 5;
  return c;
}

struct Tables {
  std::array<Matrix, kModalities> m;
  std::array<const Matrix*, kModalities> ptrs() const { return {&m[0], &m[1], &m[2]}; }
  std::array<std::size_t, kModalities> dims() const { return {m[0].cols(), m[1].cols(), m[2].cols()}; }
};

// Three views of one latent factor, so the modalities are correlated.
Tables correlated_tables(std::size_t items, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix z = rng.normal_matrix(items, 3);
  Tables t;
  const std::size_t dims[] = {6, 8, 8};
  for (std::size_t j = 0; j < kModalities; ++j) {
    const Matrix a = rng.normal_matrix(3, dims[j]);
    Matrix e(items, dims[j]);
    for (std::size_t i = 0; i < items; ++i)
      for (std::size_t d = 0; d < dims[j]; ++d) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += z(i, k) * a(k, d);
        e(i, d) = s + rng.normal(0.0, 0.05);
      }
    t.m[j] = std::move(e);
  }
  return t;
}

std::size_t brute_nearest(std::span<const double> r, const Matrix& codes) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < codes.rows(); ++j) {
    double d = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) d += (r[k] - codes(j, k)) * (r[k] - codes(j, k));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

std::vector<double> minus(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] - b[k];
  return out;
}

}  // namespace

TEST_CASE("quantize_level examples") {
  const Codebook cb(0, Matrix{{0.0, 0.0}, {1.0, 1.0}});
  const double in[] = {0.9, 1.2};
  const auto c = quantize_level(in, cb);
  CHECK(c.sid == 1);
  CHECK(c.next_residual[0] == doctest::Approx(-0.1));
  CHECK(c.next_residual[1] == doctest::Approx(0.2));

  const double exact[] = {0.0, 0.0};
  const auto e = quantize_level(exact, cb);
  CHECK(e.sid == 0);
  CHECK(e.next_residual == std::vector<double>{0.0, 0.0});

  const double mid[] = {0.5, 0.5};
  CHECK(quantize_level(mid, cb).sid == 0);
  const Codebook mirrored(0, Matrix{{1.0, 1.0}, {0.0, 0.0}});
  CHECK(quantize_level(mid, mirrored).sid == 0);

  CHECK_THROWS_AS(quantize_level(in, Codebook(0, Matrix(0, 2))), InvalidArgument);
  const double wrong[] = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(quantize_level(wrong, cb), DimensionError);
}

TEST_CASE("encode_item examples") {
  Rng rng(1);
  auto cfg = tiny_config();
  SUBCASE("one level picks the single nearest code") {
    cfg.levels = {1, 1, 1};
    const auto model = create_quantizer(cfg, {5, 5, 5}, rng);
    const Matrix s = rng.normal_matrix(1, 5);
    const auto enc = encode_item(model, 0, s.row(0));
    const auto& codes = model.branches[0].codebooks[0].codes;
    const std::size_t j = brute_nearest(enc.z, codes);
    REQUIRE(enc.sids.size() == 1);
    CHECK(enc.sids[0] == j);
    for (std::size_t k = 0; k < cfg.code_dim; ++k) CHECK(enc.zhat[k] == codes(j, k));
  }
  SUBCASE("exactly representable z leaves zero residual") {
    auto model = create_quantizer(cfg, {5, 5, 5}, rng);
    const Matrix s = rng.normal_matrix(1, 5);
    const auto z = encode_item(model, 1, s.row(0)).z;
    auto& books = model.branches[1].codebooks;
    for (auto& cb : books)
      for (double& v : cb.codes.flat()) v = 100.0;
    const std::vector<double> small = {0.01, -0.02, 0.015, 0.005};
    for (std::size_t k = 0; k < 4; ++k) {
      books[0].codes(3, k) = z[k] - small[k];
      books[1].codes(5, k) = small[k];
    }
    const auto enc = encode_item(model, 1, s.row(0));
    CHECK(enc.sids == std::vector<std::size_t>{3, 5});
    CHECK(std::sqrt(squared_norm(enc.residual)) <= 1e-12);
  }
  SUBCASE("greedy path is at least as good as a last-level deviation") {
    cfg.levels = {3, 3, 3};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng r(seed);
      const auto model = create_quantizer(cfg, {5, 5, 5}, r);
      const Matrix s = r.normal_matrix(1, 5);
      const auto enc = encode_item(model, 2, s.row(0));
      const auto& books = model.branches[2].codebooks;
      std::vector<double> res = enc.z;
      for (std::size_t l = 0; l + 1 < 3; ++l) res = minus(res, books[l].codes.row(enc.sids[l]));
      const double greedy = squared_norm(minus(res, books[2].codes.row(enc.sids[2])));
      for (std::size_t j = 0; j < books[2].size(); ++j) CHECK(greedy <= squared_norm(minus(res, books[2].codes.row(j))));
      CHECK(enc.residual == minus(enc.z, enc.zhat));
    }
  }
  SUBCASE("wrong input dimension") {
    const auto model = create_quantizer(cfg, {5, 5, 5}, rng);
    const double s[] = {1.0, 2.0};
    CHECK_THROWS_AS(encode_item(model, 0, s), DimensionError);
  }
}

TEST_CASE("planted codebook with identity encoder reconstructs to the noise floor") {
  auto cfg = tiny_config();
  cfg.levels = {1, 1, 1};
  cfg.codes = {4, 4, 4};
  cfg.code_dim = 3;
  cfg.hidden_dim = 3;
  cfg.recon = ReconLoss::kMse;
  Rng rng(2);
  auto model = create_quantizer(cfg, {3, 3, 3}, rng);
  const Matrix centroids{{2.0, 3.0, 2.5}, {5.0, 2.0, 3.0}, {3.0, 6.0, 2.0}, {6.0, 5.0, 6.0}};
  const double noise = 0.1;
  Matrix data(400, 3);
  for (std::size_t i = 0; i < data.rows(); ++i)
    for (std::size_t k = 0; k < 3; ++k) data(i, k) = centroids(i % 4, k) + rng.normal(0.0, noise);
  for (auto& b : model.branches) {
    for (auto* net : {&b.encoder, &b.decoder})
      for (auto& layer : net->layers) {
        layer.weight = Matrix::identity(3);
        layer.bias = Matrix(1, 3);
      }
    b.codebooks[0].codes = centroids;
  }
  const auto lb = evaluate_losses(model, {&data, &data, &data});
  // three modalities, each with mean squared error ≈ noise²
  CHECK(lb.recon / 3.0 == doctest::Approx(noise * noise).epsilon(0.2));
}

TEST_CASE("trained assignments match an exhaustive per-level search") {
  const auto t = correlated_tables(120, 3);
  const auto tr = train_mm_rqvae(t.ptrs(), tiny_config());
  const auto ids = assign_ids(tr.model, t.ptrs());
  REQUIRE(ids.size() == 120);
  Rng pick(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t i = pick.index(120);
    for (std::size_t m = 0; m < kModalities; ++m) {
      const auto& b = tr.model.branches[m];
      const Matrix z = mlp_apply(b.encoder, t.m[m].gather_rows(std::vector<std::size_t>{i}));
      std::vector<double> r(z.row(0).begin(), z.row(0).end());
      std::vector<double> zhat(r.size(), 0.0);
      for (std::size_t l = 0; l < b.codebooks.size(); ++l) {
        const std::size_t j = brute_nearest(r, b.codebooks[l].codes);
        CHECK(ids[i].sids[m][l] == j);
        r = minus(r, b.codebooks[l].codes.row(j));
        for (std::size_t k = 0; k < zhat.size(); ++k) zhat[k] += b.codebooks[l].codes(j, k);
      }
      CHECK(ids[i].zhat[m] == zhat);
    }
  }
}

TEST_CASE("training behavior") {
  SUBCASE("commitment-only objective shrinks the commitment loss by half") {
    auto cfg = tiny_config();
    cfg.beta = 0.0;
    cfg.recon_weight = 0.0;
    cfg.gamma = 1.0;
    cfg.epochs = 200;
    const auto t = correlated_tables(64, 4);
    const auto tr = train_mm_rqvae(t.ptrs(), cfg);
    CHECK(tr.trace.size() == 200);
    CHECK(tr.trace.back().loss.commitment <= 0.5 * tr.trace.front().loss.commitment);
  }
  SUBCASE("full objective lowers the alignment loss") {
    const auto t = correlated_tables(200, 6);
    auto cfg = tiny_config();
    cfg.epochs = 30;
    cfg.beta = 1.0;
    const auto tr = train_mm_rqvae(t.ptrs(), cfg);
    CHECK(tr.trace.back().loss.align < tr.trace.front().loss.align);
    CHECK(tr.trace.back().loss.recon < tr.trace.front().loss.recon);
  }
  SUBCASE("non-finite tables are rejected") {
    auto t = correlated_tables(64, 4);
    t.m[1](3, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train_mm_rqvae(t.ptrs(), tiny_config()), NumericError);
  }
  SUBCASE("training is deterministic") {
    const auto t = correlated_tables(80, 7);
    const auto a = train_mm_rqvae(t.ptrs(), tiny_config());
    const auto b = train_mm_rqvae(t.ptrs(), tiny_config());
    const auto ia = assign_ids(a.model, t.ptrs()), ib = assign_ids(b.model, t.ptrs());
    for (std::size_t i = 0; i < ia.size(); ++i) CHECK(ia[i].sids == ib[i].sids);
    CHECK(a.trace.back().loss.total == b.trace.back().loss.total);
    const auto again = assign_ids(a.model, t.ptrs());
    for (std::size_t i = 0; i < ia.size(); ++i) CHECK(again[i].sids == ia[i].sids);
  }
  SUBCASE("identical items receive identical ids") {
    auto t = correlated_tables(80, 8);
    for (auto& m : t.m)
      for (std::size_t k = 0; k < m.cols(); ++k) m(11, k) = m(42, k);
    const auto tr = train_mm_rqvae(t.ptrs(), tiny_config());
    const auto ids = assign_ids(tr.model, t.ptrs());
    CHECK(ids[11].sids == ids[42].sids);
  }
}

TEST_CASE("dead-code revival only touches unused codes") {
  Rng rng(3);
  Codebook cb(0, rng.normal_matrix(6, 3));
  cb.usage = {2, 0, 5, 0, 0, 1};
  const Matrix before = cb.codes;
  const Matrix residuals = rng.normal_matrix(10, 3);
  CHECK(revive_dead_codes(cb, residuals, 0.01, rng) == 3);
  for (std::size_t j : {0u, 2u, 5u})
    for (std::size_t k = 0; k < 3; ++k) CHECK(cb.codes(j, k) == before(j, k));
  for (std::size_t j : {1u, 3u, 4u}) CHECK_FALSE(cb.codes(j, 0) == before(j, 0));
  CHECK_THROWS_AS(revive_dead_codes(cb, Matrix(2, 4), 0.01, rng), DimensionError);
}

TEST_CASE("encoder gradient from the quantization loss follows alpha") {
  for (double alpha : {0.0, 1.0}) {
    auto cfg = tiny_config();
    cfg.beta = 0.0;
    cfg.recon_weight = 0.0;
    cfg.alpha = alpha;
    Rng rng(4);
    auto model = create_quantizer(cfg, {4, 5, 5}, rng);
    const std::array<Matrix, kModalities> in{rng.normal_matrix(6, 4), rng.normal_matrix(6, 5), rng.normal_matrix(6, 5)};
    const auto frozen = capture_batch(model, in);
    auto grads = QuantizerGrads::zeros_like(model);
    batch_loss(model, frozen, &grads);
    double enc = 0.0, codes = 0.0;
    for (std::size_t m = 0; m < kModalities; ++m) {
      for (const auto& w : grads.encoder[m].weight) enc += frobenius_norm(w);
      for (const auto& c : grads.codes[m]) codes += frobenius_norm(c);
    }
    if (alpha == 0.0) {
      CHECK(enc == 0.0);
    } else {
      CHECK(enc > 0.0);
    }
    CHECK(codes > 0.0);
  }
}

TEST_CASE("full quantizer objective matches central differences") {
  const auto s = test::grad_suite_quantizer(30, 77);
  INFO("worst " << s.worst << " unresolved " << s.unresolved << "/" << s.checked);
  CHECK(s.worst <= 1e-4);
  CHECK(s.unresolved_fraction() <= 0.01);
}

TEST_CASE("code embedding export") {
  const auto t = correlated_tables(64, 5);
  auto cfg = tiny_config();
  cfg.levels = {2, 3, 1};
  cfg.epochs = 3;
  const auto tr = train_mm_rqvae(t.ptrs(), cfg);
  const auto codes = export_code_embeddings(tr.model);
  REQUIRE(codes.size() == 6);
  for (const auto& c : codes) {
    CHECK(c.table.modality == data::Modality::kCode);
    CHECK(c.table.rows() == 8);
    CHECK(c.table.dim() == 4);
    CHECK(c.table.data == tr.model.branches[c.modality].codebooks[c.level].codes);
  }

  test::TempDir dir;
  save_code_embeddings(dir.path(), codes);
  const auto back = load_code_embeddings(dir.path(), cfg.levels);
  REQUIRE(back.size() == codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i)
    CHECK(data::encode_table(back[i].table) == data::encode_table(codes[i].table));
  CHECK_THROWS_AS(load_code_embeddings(dir.path(), {2, 4, 1}), IoError);

  const auto ids = assign_ids(tr.model, t.ptrs());
  for (const auto& a : ids) {
    for (std::size_t m = 0; m < kModalities; ++m) {
      std::vector<double> sum(cfg.code_dim, 0.0);
      for (const auto& c : codes) {
        if (c.modality != m) continue;
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += c.table.data(a.sids[m][c.level], k);
      }
      CHECK(sum == a.zhat[m]);
    }
  }

  save_assignments(dir / "a.jsonl", ids);
  const auto loaded = load_assignments(dir / "a.jsonl");
  REQUIRE(loaded.size() == ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(loaded[i].item == ids[i].item);
    CHECK(loaded[i].sids == ids[i].sids);
  }

  save_quantizer(dir / "q.mmqk", tr.model);
  const auto reloaded = load_quantizer(dir / "q.mmqk", cfg);
  const auto ids2 = assign_ids(reloaded, t.ptrs());
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(ids2[i].sids == ids[i].sids);
}

TEST_CASE("config validation") {
  auto c = tiny_config();
  c.codes[1] = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.beta = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_recon("mse") == ReconLoss::kMse);
  CHECK(to_string(ReconLoss::kMmd) == "mmd");
  CHECK_THROWS_AS(parse_recon("l1"), ConfigError);
  CHECK(parse_codebook_init("random") == CodebookInit::kRandom);
}
