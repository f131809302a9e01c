// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>

#include "mmq/diffkit/checkpoint.hpp"
#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"
#include "mmq/diffkit/optim.hpp"

namespace mmq::rq {

Codebook::Codebook(std::size_t lvl, Matrix c) : level(lvl), codes(std::move(c)), usage(codes.rows(), 0) {}

void Codebook::reset_usage() { std::fill(usage.begin(), usage.end(), 0); }

LevelChoice quantize_level(std::span<const double> residual, const Codebook& codebook) {
  if (codebook.size() == 0) throw InvalidArgument("quantize_level: empty codebook");
  if (residual.size() != codebook.dim()) {
    throw DimensionError("quantize_level: residual has dim " + std::to_string(residual.size()) + ", codes have " +
                         std::to_string(codebook.dim()));
  }
  const auto nr = kernels::nearest_rows(Matrix::row_vector(residual), codebook.codes);
  LevelChoice out;
  out.sid = nr.index[0];
  out.next_residual.assign(residual.begin(), residual.end());
  const auto code = codebook.codes.row(out.sid);
  for (std::size_t k = 0; k < code.size(); ++k) out.next_residual[k] -= code[k];
  return out;
}

ReconLoss parse_recon(const std::string& name) {
  if (name == "mmd") return ReconLoss::kMmd;
  if (name == "mse") return ReconLoss::kMse;
  throw ConfigError("unknown reconstruction loss '" + name + "' (expected mmd|mse)");
}

std::string to_string(ReconLoss r) { return r == ReconLoss::kMmd ? "mmd" : "mse"; }

CodebookInit parse_codebook_init(const std::string& name) {
  if (name == "kmeans") return CodebookInit::kKMeans;
  if (name == "random") return CodebookInit::kRandom;
  throw ConfigError("unknown codebook init '" + name + "' (expected kmeans|random)");
}

void QuantizerConfig::validate() const {
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (codes[m] < 2) throw ConfigError("quantizer: codes must be >= 2");
    if (levels[m] < 1) throw ConfigError("quantizer: levels must be >= 1");
  }
  if (code_dim == 0 || hidden_dim == 0) throw ConfigError("quantizer: code_dim and hidden_dim must be > 0");
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0 || recon_weight < 0.0) {
    throw ConfigError("quantizer: loss weights must be >= 0");
  }
  if (!(temperature > 0.0)) throw ConfigError("quantizer: temperature must be > 0");
  if (!kernel.median_heuristic && !(kernel.sigma > 0.0)) throw ConfigError("quantizer: sigma must be > 0");
  if (batch_size < 2) throw ConfigError("quantizer: batch_size must be >= 2");
  if (!(lr > 0.0)) throw ConfigError("quantizer: lr must be > 0");
  if (dead_code_noise < 0.0) throw ConfigError("quantizer: dead_code_noise must be >= 0");
}

std::size_t QuantizerModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : branches) {
    n += b.encoder.parameter_count() + b.decoder.parameter_count();
    for (const auto& cb : b.codebooks) n += cb.codes.size();
  }
  return n;
}

QuantizerModel create_quantizer(const QuantizerConfig& cfg, const std::array<std::size_t, kModalities>& input_dims,
                                Rng& rng) {
  cfg.validate();
  QuantizerModel model;
  model.config = cfg;
  const std::array<Activation, 2> acts = {Activation::kRelu, Activation::kIdentity};
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (input_dims[m] == 0) throw DimensionError("quantizer: modality input dim must be > 0");
    auto& b = model.branches[m];
    const std::array<std::size_t, 3> enc = {input_dims[m], cfg.hidden_dim, cfg.code_dim};
    const std::array<std::size_t, 3> dec = {cfg.code_dim, cfg.hidden_dim, input_dims[m]};
    b.encoder = MlpParams::create(enc, acts, rng);
    b.decoder = MlpParams::create(dec, acts, rng);
    for (std::size_t l = 0; l < cfg.levels[m]; ++l) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.code_dim)) / static_cast<double>(l + 1);
      b.codebooks.emplace_back(l, rng.normal_matrix(cfg.codes[m], cfg.code_dim, sd));
    }
    b.sigma = cfg.kernel.median_heuristic ? 1.0 : cfg.kernel.sigma;
  }
  return model;
}

BatchCodes quantize_rows(const Matrix& z, std::span<const Codebook> codebooks) {
  BatchCodes out;
  out.zhat = Matrix(z.rows(), z.cols());
  Matrix r = z;
  for (const auto& cb : codebooks) {
    if (cb.dim() != z.cols()) throw DimensionError("quantize_rows: code dim mismatch");
    auto nr = kernels::nearest_rows(r, cb.codes);
    out.residuals.push_back(r);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const auto code = cb.codes.row(nr.index[i]);
      for (std::size_t k = 0; k < z.cols(); ++k) {
        r(i, k) -= code[k];
        out.zhat(i, k) += code[k];
      }
    }
    out.sids.push_back(std::move(nr.index));
  }
  return out;
}

EncodedItem encode_item(const QuantizerModel& model, std::size_t modality, std::span<const double> s) {
  if (modality >= kModalities) throw InvalidArgument("encode_item: modality index out of range");
  const auto& b = model.branches[modality];
  if (s.size() != b.encoder.input_dim()) {
    throw DimensionError("encode_item: modality " + std::string(kModalityTags[modality]) + " expects dim " +
                         std::to_string(b.encoder.input_dim()) + ", got " + std::to_string(s.size()));
  }
  const Matrix z = mlp_apply(b.encoder, Matrix::row_vector(s));
  const BatchCodes bc = quantize_rows(z, b.codebooks);
  EncodedItem e;
  e.z.assign(z.flat().begin(), z.flat().end());
  e.zhat.assign(bc.zhat.flat().begin(), bc.zhat.flat().end());
  for (const auto& lv : bc.sids) e.sids.push_back(lv[0]);
  e.residual.resize(e.z.size());
  for (std::size_t k = 0; k < e.z.size(); ++k) e.residual[k] = e.z[k] - e.zhat[k];
  return e;
}

namespace {

Matrix gather(const Matrix& codes, const std::vector<std::size_t>& idx) { return codes.gather_rows(idx); }

void scatter_add(Matrix& dst, const std::vector<std::size_t>& idx, const Matrix& src, double scale) {
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto d = dst.row(idx[i]);
    const auto s = src.row(i);
    for (std::size_t k = 0; k < s.size(); ++k) d[k] += scale * s[k];
  }
}

}  // namespace

FrozenBatch capture_batch(const QuantizerModel& model, const std::array<Matrix, kModalities>& inputs) {
  FrozenBatch f;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const auto& b = model.branches[m];
    f.inputs[m] = inputs[m];
    const Matrix z = mlp_apply(b.encoder, inputs[m]);
    BatchCodes bc = quantize_rows(z, b.codebooks);
    for (std::size_t l = 0; l < b.codebooks.size(); ++l) f.codes_sg[m].push_back(gather(b.codebooks[l].codes, bc.sids[l]));
    f.sids[m] = std::move(bc.sids);
    f.residuals_sg[m] = std::move(bc.residuals);
    f.st_offset[m] = bc.zhat - z;
  }
  return f;
}

QuantizerGrads QuantizerGrads::zeros_like(const QuantizerModel& model) {
  QuantizerGrads g;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const auto& b = model.branches[m];
    g.encoder[m] = GradStore::zeros_like(b.encoder);
    g.decoder[m] = GradStore::zeros_like(b.decoder);
    for (const auto& cb : b.codebooks) g.codes[m].emplace_back(cb.size(), cb.dim());
  }
  return g;
}

LossBreakdown batch_loss(const QuantizerModel& model, const FrozenBatch& frozen, QuantizerGrads* grads) {
  const auto& cfg = model.config;
  const bool with_grad = grads != nullptr;
  LossBreakdown out;
  std::array<Matrix, kModalities> zhat_live;
  std::array<Matrix, kModalities> dz;
  std::array<MlpCache, kModalities> enc_cache;

  for (std::size_t m = 0; m < kModalities; ++m) {
    const auto& b = model.branches[m];
    const std::size_t levels = b.codebooks.size();
    auto enc = mlp_forward(b.encoder, frozen.inputs[m]);
    const Matrix& z = enc.output;
    enc_cache[m] = std::move(enc.cache);
    dz[m] = Matrix(z.rows(), z.cols());

    // r_{l−1} = z − Σ_{k<l} SG(CE_k): live in the encoder output only
    std::vector<Matrix> res_live, codes_live;
    Matrix r = z;
    zhat_live[m] = Matrix(z.rows(), z.cols());
    for (std::size_t l = 0; l < levels; ++l) {
      res_live.push_back(r);
      codes_live.push_back(gather(b.codebooks[l].codes, frozen.sids[m][l]));
      r -= frozen.codes_sg[m][l];
      zhat_live[m] += codes_live.back();
    }
    if (cfg.gamma > 0.0) {
      const auto c = losses::rq_commitment_terms(res_live, codes_live, frozen.residuals_sg[m], frozen.codes_sg[m], cfg.alpha);
      out.commitment += c.value;
      if (with_grad) {
        for (std::size_t l = 0; l < levels; ++l) {
          Matrix gr = c.grad_residuals[l];
          gr *= cfg.gamma;
          dz[m] += gr;
          scatter_add(grads->codes[m][l], frozen.sids[m][l], c.grad_codes[l], cfg.gamma);
        }
      }
    }

    if (cfg.recon_weight > 0.0) {
      // straight-through: decoder sees ẑ, gradient lands on z
      Matrix zst = z + frozen.st_offset[m];
      auto dec = mlp_forward(b.decoder, zst);
      Matrix dshat;
      if (cfg.recon == ReconLoss::kMmd) {
        const losses::KernelConfig kc{b.sigma, false};
        auto r2 = losses::mmd2(dec.output, frozen.inputs[m], kc, cfg.estimator, with_grad);
        out.recon += r2.value;
        dshat = std::move(r2.grad_x);
      } else {
        auto r2 = losses::mse(dec.output, frozen.inputs[m]);
        out.recon += r2.value;
        dshat = std::move(r2.grad_a);
      }
      if (with_grad) {
        dshat *= cfg.recon_weight;
        GradStore gd = mlp_backward(b.decoder, dec.cache, dshat);
        dz[m] += gd.input;
        gd.input = Matrix();
        for (std::size_t l = 0; l < gd.weight.size(); ++l) {
          grads->decoder[m].weight[l] += gd.weight[l];
          grads->decoder[m].bias[l] += gd.bias[l];
        }
      }
    }
  }

  if (cfg.beta > 0.0) {
    for (std::size_t other : {std::size_t{1}, std::size_t{2}}) {
      auto nce = losses::info_nce(zhat_live[0], zhat_live[other], cfg.temperature, with_grad);
      out.align += nce.value;
      if (with_grad) {
        for (std::size_t l = 0; l < frozen.sids[0].size(); ++l)
          scatter_add(grads->codes[0][l], frozen.sids[0][l], nce.grad_anchors, cfg.beta);
        for (std::size_t l = 0; l < frozen.sids[other].size(); ++l)
          scatter_add(grads->codes[other][l], frozen.sids[other][l], nce.grad_positives, cfg.beta);
      }
    }
  }

  if (with_grad) {
    for (std::size_t m = 0; m < kModalities; ++m) {
      GradStore ge = mlp_backward(model.branches[m].encoder, enc_cache[m], dz[m]);
      for (std::size_t l = 0; l < ge.weight.size(); ++l) {
        grads->encoder[m].weight[l] += ge.weight[l];
        grads->encoder[m].bias[l] += ge.bias[l];
      }
    }
  }
  out.total = cfg.recon_weight * out.recon + cfg.beta * out.align + cfg.gamma * out.commitment;
  return out;
}

std::vector<ParamRef> parameter_refs(QuantizerModel& model, QuantizerGrads& grads) {
  std::vector<ParamRef> refs;
  for (std::size_t m = 0; m < kModalities; ++m) {
    auto& b = model.branches[m];
    const std::string tag = kModalityTags[m];
    append_mlp_params(refs, tag + "/encoder", b.encoder, grads.encoder[m]);
    append_mlp_params(refs, tag + "/decoder", b.decoder, grads.decoder[m]);
    for (std::size_t l = 0; l < b.codebooks.size(); ++l) {
      refs.push_back({tag + "/codebook/" + std::to_string(l), &b.codebooks[l].codes, &grads.codes[m][l]});
    }
  }
  return refs;
}

std::size_t revive_dead_codes(Codebook& codebook, const Matrix& residuals, double noise, Rng& rng) {
  if (residuals.rows() == 0) return 0;
  if (residuals.cols() != codebook.dim()) throw DimensionError("revive_dead_codes: residual dim mismatch");
  std::size_t changed = 0;
  for (std::size_t j = 0; j < codebook.size(); ++j) {
    if (codebook.usage[j] != 0) continue;
    const auto src = residuals.row(rng.index(residuals.rows()));
    auto dst = codebook.codes.row(j);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = src[k] + (noise > 0.0 ? rng.normal(0.0, noise) : 0.0);
    ++changed;
  }
  return changed;
}

namespace {

// k-means++ seeding followed by Lloyd iterations.
Matrix kmeans(const Matrix& x, std::size_t k, std::size_t iters, Rng& rng) {
  const std::size_t n = x.rows();
  Matrix centers(k, x.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double v : d2) total += v;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          u -= d2[i];
          if (u <= 0.0 && d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.index(n);
      }
    }
    std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(x.row(i), centers.row(c)));
  }
  for (std::size_t it = 0; it < iters; ++it) {
    const auto nr = kernels::nearest_rows(x, centers);
    Matrix sums(k, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[nr.index[i]];
      auto s = sums.row(nr.index[i]);
      for (std::size_t d = 0; d < x.cols(); ++d) s[d] += x(i, d);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < x.cols(); ++d) centers(c, d) = sums(c, d) / static_cast<double>(counts[c]);
    }
  }
  return centers;
}

void check_tables(const std::array<const Matrix*, kModalities>& tables) {
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (tables[m] == nullptr) throw InvalidArgument("quantizer: missing table for modality " + std::string(kModalityTags[m]));
    if (tables[m]->rows() != tables[0]->rows()) throw DimensionError("quantizer: tables are not row-aligned");
    if (!tables[m]->all_finite()) throw NumericError("quantizer: table " + std::string(kModalityTags[m]) + " has non-finite entries");
  }
}

std::array<Matrix, kModalities> gather_batch(const std::array<const Matrix*, kModalities>& tables,
                                             std::span<const std::size_t> idx) {
  std::array<Matrix, kModalities> out;
  for (std::size_t m = 0; m < kModalities; ++m) out[m] = tables[m]->gather_rows(idx);
  return out;
}

}  // namespace

TrainResult train_mm_rqvae(const std::array<const Matrix*, kModalities>& tables, const QuantizerConfig& cfg) {
  cfg.validate();
  check_tables(tables);
  const std::size_t n = tables[0]->rows();
  if (n < 2) throw InvalidArgument("quantizer: need at least two items");

  const Rng root(cfg.seed);
  Rng init_rng = root.split("rq/init");
  Rng shuffle_rng = root.split("rq/shuffle");
  Rng revive_rng = root.split("rq/revive");
  TrainResult result;
  QuantizerModel& model = result.model;
  model = create_quantizer(cfg, {tables[0]->cols(), tables[1]->cols(), tables[2]->cols()}, init_rng);

  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  auto epoch_order = [&]() {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), shuffle_rng.engine());
    return perm;
  };
  // even split so that no batch is smaller than ⌊n / batches⌋
  auto batch_span = [&](const std::vector<std::size_t>& perm, std::size_t b) {
    const std::size_t lo = b * n / batches, hi = (b + 1) * n / batches;
    return std::span<const std::size_t>(perm.data() + lo, hi - lo);
  };

  std::vector<std::size_t> perm = epoch_order();
  if (cfg.kernel.median_heuristic) {
    const auto first = gather_batch(tables, batch_span(perm, 0));
    for (std::size_t m = 0; m < kModalities; ++m) {
      model.branches[m].sigma = losses::resolve_kernel(cfg.kernel, first[m]).sigma;
    }
  }
  if (cfg.init == CodebookInit::kKMeans) {
    for (std::size_t m = 0; m < kModalities; ++m) {
      auto& b = model.branches[m];
      Matrix r = mlp_apply(b.encoder, *tables[m]);
      for (auto& cb : b.codebooks) {
        cb.codes = kmeans(r, cb.size(), cfg.kmeans_iters, init_rng);
        const auto nr = kernels::nearest_rows(r, cb.codes);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < r.cols(); ++k) r(i, k) -= cb.codes(nr.index[i], k);
      }
    }
  }

  AdamW opt(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  QuantizerGrads grads = QuantizerGrads::zeros_like(model);
  const auto refs = parameter_refs(model, grads);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch > 0) perm = epoch_order();
    for (auto& b : model.branches)
      for (auto& cb : b.codebooks) cb.reset_usage();
    EpochTrace tr;
    tr.epoch = epoch;
    for (std::size_t bi = 0; bi < batches; ++bi, ++step) {
      const auto idx = batch_span(perm, bi);
      const FrozenBatch frozen = capture_batch(model, gather_batch(tables, idx));
      for (std::size_t m = 0; m < kModalities; ++m)
        for (std::size_t l = 0; l < frozen.sids[m].size(); ++l)
          for (auto sid : frozen.sids[m][l]) ++model.branches[m].codebooks[l].usage[sid];
      for (auto& r : refs) r.grad->fill(0.0);
      const LossBreakdown lb = batch_loss(model, frozen, &grads);
      if (!std::isfinite(lb.total)) throw NumericError("quantizer: non-finite loss at step " + std::to_string(step));
      opt.step(refs);
      const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
      tr.loss.recon += w * lb.recon;
      tr.loss.align += w * lb.align;
      tr.loss.commitment += w * lb.commitment;
      tr.loss.total += w * lb.total;
    }
    if (epoch + 1 < cfg.epochs) {
      for (std::size_t m = 0; m < kModalities; ++m) {
        auto& b = model.branches[m];
        const bool any_dead = std::any_of(b.codebooks.begin(), b.codebooks.end(), [](const Codebook& cb) {
          return std::find(cb.usage.begin(), cb.usage.end(), 0) != cb.usage.end();
        });
        if (!any_dead) continue;
        const BatchCodes bc = quantize_rows(mlp_apply(b.encoder, *tables[m]), b.codebooks);
        for (std::size_t l = 0; l < b.codebooks.size(); ++l) {
          tr.revived_codes += revive_dead_codes(b.codebooks[l], bc.residuals[l], cfg.dead_code_noise, revive_rng);
        }
      }
    }
    result.trace.push_back(tr);
  }
  return result;
}

LossBreakdown evaluate_losses(const QuantizerModel& model, const std::array<const Matrix*, kModalities>& tables) {
  check_tables(tables);
  std::array<Matrix, kModalities> inputs;
  for (std::size_t m = 0; m < kModalities; ++m) inputs[m] = *tables[m];
  return batch_loss(model, capture_batch(model, inputs), nullptr);
}

std::vector<SemanticIdAssignment> assign_ids(const QuantizerModel& model,
                                             const std::array<const Matrix*, kModalities>& tables) {
  check_tables(tables);
  const std::size_t n = tables[0]->rows();
  std::vector<SemanticIdAssignment> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].item = i;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const auto& b = model.branches[m];
    if (tables[m]->cols() != b.encoder.input_dim()) {
      throw DimensionError("assign_ids: modality " + std::string(kModalityTags[m]) + " table has dim " +
                           std::to_string(tables[m]->cols()) + ", encoder expects " + std::to_string(b.encoder.input_dim()));
    }
    const BatchCodes bc = quantize_rows(mlp_apply(b.encoder, *tables[m]), b.codebooks);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& lv : bc.sids) out[i].sids[m].push_back(static_cast<std::uint32_t>(lv[i]));
      out[i].zhat[m].assign(bc.zhat.row(i).begin(), bc.zhat.row(i).end());
    }
  }
  return out;
}

void save_assignments(const std::filesystem::path& path, std::span<const SemanticIdAssignment> assignments) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& a : assignments) {
    for (std::size_t m = 0; m < kModalities; ++m) {
      nlohmann::ordered_json j;
      j["item"] = a.item;
      j["modality"] = kModalityTags[m];
      j["sids"] = a.sids[m];
      out << j.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<SemanticIdAssignment> load_assignments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<SemanticIdAssignment> out;
  std::map<std::uint64_t, std::size_t> slot;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto item = j.at("item").get<std::uint64_t>();
      const auto mod = data::parse_modality(j.at("modality").get<std::string>());
      const auto mi = static_cast<std::size_t>(mod);
      if (mi >= kModalities) throw IoError("modality must be c, t or v");
      auto [it, fresh] = slot.try_emplace(item, out.size());
      if (fresh) {
        out.emplace_back();
        out.back().item = item;
      }
      out[it->second].sids[mi] = j.at("sids").get<std::vector<std::uint32_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ExportedCodes> export_code_embeddings(const QuantizerModel& model) {
  std::vector<ExportedCodes> out;
  for (std::size_t m = 0; m < kModalities; ++m) {
    for (const auto& cb : model.branches[m].codebooks) {
      ExportedCodes e;
      e.modality = m;
      e.level = cb.level;
      e.table.modality = data::Modality::kCode;
      e.table.data = cb.codes;
      e.table.provenance = std::string("codebook ") + kModalityTags[m] + "/" + std::to_string(cb.level);
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::string code_table_filename(std::size_t modality, std::size_t level) {
  return std::string("codes_") + kModalityTags.at(modality) + "_l" + std::to_string(level) + ".mmqe";
}

void save_code_embeddings(const std::filesystem::path& dir, std::span<const ExportedCodes> codes) {
  for (const auto& c : codes) data::save_table(dir / code_table_filename(c.modality, c.level), c.table);
}

std::vector<ExportedCodes> load_code_embeddings(const std::filesystem::path& dir,
                                                const std::array<std::size_t, kModalities>& levels) {
  std::vector<ExportedCodes> out;
  for (std::size_t m = 0; m < kModalities; ++m) {
    for (std::size_t l = 0; l < levels[m]; ++l) {
      ExportedCodes e;
      e.modality = m;
      e.level = l;
      e.table = data::load_table(dir / code_table_filename(m, l));
      if (e.table.modality != data::Modality::kCode) {
        throw IoError("'" + code_table_filename(m, l) + "' is not a code table");
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

void save_quantizer(const std::filesystem::path& path, const QuantizerModel& model) {
  std::vector<NamedTensor> t;
  Matrix dims(1, kModalities);
  for (std::size_t m = 0; m < kModalities; ++m) dims(0, m) = static_cast<double>(model.input_dim(m));
  t.push_back({"rq/input_dims", dims});
  for (std::size_t m = 0; m < kModalities; ++m) {
    const auto& b = model.branches[m];
    const std::string tag = std::string("rq/") + kModalityTags[m];
    append_mlp_tensors(t, tag + "/encoder", b.encoder);
    append_mlp_tensors(t, tag + "/decoder", b.decoder);
    for (const auto& cb : b.codebooks) t.push_back({tag + "/codebook/" + std::to_string(cb.level), cb.codes});
    t.push_back({tag + "/sigma", Matrix(1, 1, b.sigma)});
  }
  save_checkpoint(path, t);
}

QuantizerModel load_quantizer(const std::filesystem::path& path, const QuantizerConfig& cfg) {
  const auto t = load_checkpoint(path);
  const Matrix& dims = find_tensor(t, "rq/input_dims");
  if (dims.rows() != 1 || dims.cols() != kModalities) throw IoError("quantizer checkpoint: bad rq/input_dims");
  std::array<std::size_t, kModalities> in{};
  for (std::size_t m = 0; m < kModalities; ++m) in[m] = static_cast<std::size_t>(dims(0, m));
  Rng scratch(0);
  QuantizerModel model = create_quantizer(cfg, in, scratch);
  for (std::size_t m = 0; m < kModalities; ++m) {
    auto& b = model.branches[m];
    const std::string tag = std::string("rq/") + kModalityTags[m];
    load_mlp_tensors(t, tag + "/encoder", b.encoder);
    load_mlp_tensors(t, tag + "/decoder", b.decoder);
    for (auto& cb : b.codebooks) {
      const Matrix& c = find_tensor(t, tag + "/codebook/" + std::to_string(cb.level));
      if (!c.same_shape(cb.codes)) {
        throw DimensionError("quantizer checkpoint: codebook " + tag + "/" + std::to_string(cb.level) + " has shape " +
                             c.shape_string() + ", config expects " + cb.codes.shape_string());
      }
      cb.codes = c;
    }
    b.sigma = find_tensor(t, tag + "/sigma")(0, 0);
  }
  return model;
}

}  // namespace mmq::rq
