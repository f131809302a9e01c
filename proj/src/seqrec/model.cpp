// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/seqrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmq/diffkit/checkpoint.hpp"
#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"
#include "mmq/losses.hpp"
#include "mmq/seqrec/layers.hpp"

namespace mmq::seqrec {

TokenMode parse_token_mode(const std::string& name) {
  if (name == "fused") return TokenMode::kFused;
  if (name == "per-modality") return TokenMode::kPerModality;
  throw ConfigError("unknown token mode '" + name + "' (expected fused|per-modality)");
}

std::string to_string(TokenMode m) { return m == TokenMode::kFused ? "fused" : "per-modality"; }

SidInit parse_sid_init(const std::string& name) {
  if (name == "code-embeddings") return SidInit::kCodeEmbeddings;
  if (name == "random") return SidInit::kRandom;
  throw ConfigError("unknown SID init '" + name + "' (expected code-embeddings|random)");
}

std::string to_string(SidInit s) { return s == SidInit::kCodeEmbeddings ? "code-embeddings" : "random"; }

void RecConfig::validate() const {
  if (d_model == 0 || layers == 0 || heads == 0 || ffn_dim == 0 || max_len == 0 || token_hidden == 0 || g_hidden == 0) {
    throw ConfigError("recommender: sizes must be positive");
  }
  if (d_model % heads != 0) throw ConfigError("recommender: d_model must be divisible by heads");
  if (lora && lora_rank == 0) throw ConfigError("recommender: lora_rank must be > 0");
  if (lora && !(lora_alpha > 0.0)) throw ConfigError("recommender: lora_alpha must be > 0");
  if (batch_size == 0) throw ConfigError("recommender: batch_size must be > 0");
  if (!(lr > 0.0)) throw ConfigError("recommender: lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("recommender: weight_decay must be >= 0");
}

namespace {

template <typename Params, typename M>
void collect(Params& p, std::vector<std::pair<std::string, M*>>& out) {
  auto add = [&](std::string name, M& m) {
    if (!m.empty()) out.emplace_back(std::move(name), &m);
  };
  auto add_mlp = [&](const std::string& prefix, auto& mlp) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
      add(prefix + "/" + std::to_string(l) + "/weight", mlp.layers[l].weight);
      add(prefix + "/" + std::to_string(l) + "/bias", mlp.layers[l].bias);
    }
  };
  for (std::size_t m = 0; m < kModalities; ++m) {
    const std::string tag = rq::kModalityTags[m];
    add("tokenizer/proj/" + tag + "/weight", p.proj_w[m]);
    add("tokenizer/proj/" + tag + "/bias", p.proj_b[m]);
    for (std::size_t l = 0; l < p.sid_tables[m].size(); ++l) add("tokenizer/sid/" + tag + "/" + std::to_string(l), p.sid_tables[m][l]);
  }
  for (std::size_t i = 0; i < p.token_mlp.size(); ++i) add_mlp("tokenizer/mlp/" + std::to_string(i), p.token_mlp[i]);
  add("backbone/base/pos", p.pos);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = p.blocks[b];
    const std::string base = "backbone/base/" + std::to_string(b) + "/";
    add(base + "ln1_gain", blk.ln1_gain);
    add(base + "ln1_bias", blk.ln1_bias);
    add(base + "wq", blk.wq);
    add(base + "wk", blk.wk);
    add(base + "wv", blk.wv);
    add(base + "wo", blk.wo);
    add(base + "ln2_gain", blk.ln2_gain);
    add(base + "ln2_bias", blk.ln2_bias);
    add(base + "up_w", blk.up_w);
    add(base + "up_bias", blk.up_bias);
    add(base + "down_w", blk.down_w);
    add(base + "down_bias", blk.down_bias);
    const std::string lora = "backbone/lora/" + std::to_string(b) + "/";
    add(lora + "up_a", blk.up_a);
    add(lora + "up_b", blk.up_b);
    add(lora + "down_a", blk.down_a);
    add(lora + "down_b", blk.down_b);
  }
  add("backbone/base/final/ln_gain", p.lnf_gain);
  add("backbone/base/final/ln_bias", p.lnf_bias);
  add_mlp("head/g", p.g);
  add("head/e_x", p.e_x);
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

void add_mlp_grads(MlpParams& dst, const GradStore& g) {
  for (std::size_t l = 0; l < dst.layers.size(); ++l) {
    dst.layers[l].weight += g.weight[l];
    dst.layers[l].bias += g.bias[l];
  }
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> RecParams::named() {
  std::vector<std::pair<std::string, Matrix*>> out;
  collect(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> RecParams::named() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  collect(*this, out);
  return out;
}

RecParams RecParams::zeros_like() const {
  RecParams z = *this;
  for (auto& [name, m] : z.named()) m->fill(0.0);
  return z;
}

void ItemInputs::validate(const std::array<std::size_t, kModalities>& levels) const {
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (tables[m] == nullptr) throw InvalidArgument(std::string("item inputs: missing table for modality ") + rq::kModalityTags[m]);
    if (tables[m]->rows() < items()) {
      throw InvalidArgument("item inputs: item " + std::to_string(tables[m]->rows()) + " has no " +
                            rq::kModalityTags[m] + " embedding");
    }
  }
  if (freq.size() != items()) throw InvalidArgument("item inputs: frequency feature length differs from item count");
  for (std::size_t i = 0; i < items(); ++i) {
    for (std::size_t m = 0; m < kModalities; ++m) {
      if (sids[i][m].size() != levels[m]) {
        throw InvalidArgument("item inputs: item " + std::to_string(i) + " has " + std::to_string(sids[i][m].size()) +
                              " semantic IDs for modality " + rq::kModalityTags[m] + ", expected " + std::to_string(levels[m]));
      }
    }
  }
}

ItemInputs make_item_inputs(const std::array<const Matrix*, kModalities>& tables,
                            std::span<const rq::SemanticIdAssignment> assignments, std::vector<double> freq) {
  ItemInputs in;
  in.tables = tables;
  in.sids.resize(assignments.size());
  for (const auto& a : assignments) {
    if (a.item >= assignments.size()) throw InvalidArgument("item inputs: assignment for item " + std::to_string(a.item) + " outside catalog");
    in.sids[a.item] = a.sids;
  }
  in.freq = std::move(freq);
  return in;
}

std::vector<double> frequency_feature(std::span<const std::uint64_t> counts) {
  std::vector<double> q(counts.size());
  if (counts.empty()) return q;
  for (std::size_t i = 0; i < counts.size(); ++i) q[i] = std::log(static_cast<double>(counts[i]) + 1.0);
  const auto [lo, hi] = std::minmax_element(q.begin(), q.end());
  const double mn = *lo, mx = *hi;
  for (double& v : q) v = mx > mn ? (v - mn) / (mx - mn) : 0.5;
  return q;
}

RecModel create_recommender(const RecConfig& cfg, const std::array<std::size_t, kModalities>& input_dims,
                            std::size_t items, std::span<const rq::ExportedCodes> codes, Rng& rng) {
  cfg.validate();
  if (items == 0) throw InvalidArgument("recommender: empty catalog");
  RecModel model;
  model.config = cfg;
  RecParams& p = model.params;
  const std::size_t d = cfg.d_model;

  Rng proj_rng = rng.split("rec/proj");
  for (std::size_t m = 0; m < kModalities; ++m) {
    p.proj_w[m] = proj_rng.normal_matrix(input_dims[m], d, 1.0 / std::sqrt(static_cast<double>(input_dims[m])));
    p.proj_b[m] = Matrix(1, d);
  }

  Rng sid_rng = rng.split("rec/sid-random");
  std::array<std::size_t, kModalities> code_dim{};
  for (std::size_t m = 0; m < kModalities; ++m) {
    std::vector<const rq::ExportedCodes*> mine;
    for (const auto& c : codes) {
      if (c.modality == m) mine.push_back(&c);
    }
    std::sort(mine.begin(), mine.end(), [](auto* a, auto* b) { return a->level < b->level; });
    if (mine.empty()) throw InvalidArgument(std::string("recommender: no code tables for modality ") + rq::kModalityTags[m]);
    for (std::size_t l = 0; l < mine.size(); ++l) {
      if (mine[l]->level != l) throw InvalidArgument("recommender: code tables skip a level");
      const Matrix& src = mine[l]->table.data;
      if (cfg.sid_init == SidInit::kCodeEmbeddings) {
        p.sid_tables[m].push_back(src);
      } else {
        double mean = 0.0, var = 0.0;
        for (double v : src.flat()) mean += v;
        mean /= static_cast<double>(src.size());
        for (double v : src.flat()) var += (v - mean) * (v - mean);
        double sd = std::sqrt(var / static_cast<double>(src.size()));
        if (!(sd > 0.0)) sd = 1.0 / std::sqrt(static_cast<double>(src.cols()));
        p.sid_tables[m].push_back(sid_rng.normal_matrix(src.rows(), src.cols(), sd));
      }
    }
    code_dim[m] = p.sid_tables[m][0].cols();
  }

  Rng tok_rng = rng.split("rec/token-mlp");
  const std::array<Activation, 2> acts = {Activation::kRelu, Activation::kIdentity};
  if (cfg.token_mode == TokenMode::kFused) {
    const std::array<std::size_t, 3> dims = {kModalities * d + code_dim[0] + code_dim[1] + code_dim[2], cfg.token_hidden, d};
    p.token_mlp.push_back(MlpParams::create(dims, acts, tok_rng));
  } else {
    for (std::size_t m = 0; m < kModalities; ++m) {
      const std::array<std::size_t, 3> dims = {d + code_dim[m], cfg.token_hidden, d};
      p.token_mlp.push_back(MlpParams::create(dims, acts, tok_rng));
    }
  }

  Rng bb_rng = rng.split("rec/backbone");
  Rng lora_rng = rng.split("rec/lora");
  p.pos = bb_rng.normal_matrix(cfg.max_len * cfg.tokens_per_item(), d, 0.1);
  const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t b = 0; b < cfg.layers; ++b) {
    Block blk;
    blk.ln1_gain = Matrix(1, d, 1.0);
    blk.ln1_bias = Matrix(1, d);
    blk.wq = bb_rng.normal_matrix(d, d, sd_d);
    blk.wk = bb_rng.normal_matrix(d, d, sd_d);
    blk.wv = bb_rng.normal_matrix(d, d, sd_d);
    blk.wo = bb_rng.normal_matrix(d, d, sd_d);
    blk.ln2_gain = Matrix(1, d, 1.0);
    blk.ln2_bias = Matrix(1, d);
    blk.up_w = bb_rng.normal_matrix(d, cfg.ffn_dim, std::sqrt(2.0 / static_cast<double>(d)));
    blk.up_bias = Matrix(1, cfg.ffn_dim);
    blk.down_w = bb_rng.normal_matrix(cfg.ffn_dim, d, 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim)));
    blk.down_bias = Matrix(1, d);
    if (cfg.lora) {
      const std::size_t r = cfg.lora_rank;
      blk.up_a = lora_rng.normal_matrix(d, r, sd_d);
      blk.up_b = Matrix(r, cfg.ffn_dim);
      blk.down_a = lora_rng.normal_matrix(cfg.ffn_dim, r, 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim)));
      blk.down_b = Matrix(r, d);
    }
    p.blocks.push_back(std::move(blk));
  }
  p.lnf_gain = Matrix(1, d, 1.0);
  p.lnf_bias = Matrix(1, d);

  Rng head_rng = rng.split("rec/head");
  const std::array<std::size_t, 3> gdims = {1, cfg.g_hidden, 4};
  p.g = MlpParams::create(gdims, acts, head_rng);
  p.g.layers.back().bias.fill(1.0);
  p.e_x = head_rng.normal_matrix(items, d, sd_d);
  return model;
}

namespace {

// Forward state of the per-item pieces for a set of distinct items.
struct ItemForward {
  std::vector<std::uint32_t> items;
  std::array<Matrix, kModalities> feats;  // rows of E_j (stop-gradient inputs)
  std::array<Matrix, kModalities> proj;
  std::array<Matrix, kModalities> sid_sum;
  std::vector<MlpCache> token_cache;
  Matrix tokens;  // (items × k) × d, item-major
  MlpCache g_cache;
  Matrix weights;  // items × 4
};

ItemForward item_forward(const RecModel& model, const ItemInputs& inputs, std::vector<std::uint32_t> items) {
  const RecParams& p = model.params;
  const auto& cfg = model.config;
  ItemForward f;
  f.items = std::move(items);
  const std::size_t u = f.items.size(), d = cfg.d_model;
  std::vector<std::size_t> idx(f.items.begin(), f.items.end());
  for (auto it : f.items) {
    if (it >= inputs.items()) throw InvalidArgument("item " + std::to_string(it) + " is outside the catalog");
  }
  for (std::size_t m = 0; m < kModalities; ++m) {
    for (auto it : f.items) {
      if (it >= inputs.tables[m]->rows()) {
        throw InvalidArgument("item " + std::to_string(it) + " has no " + rq::kModalityTags[m] + " embedding");
      }
      if (inputs.sids[it][m].size() != p.sid_tables[m].size()) {
        throw InvalidArgument("item " + std::to_string(it) + " lacks " + rq::kModalityTags[m] + " semantic IDs");
      }
    }
    f.feats[m] = inputs.tables[m]->gather_rows(idx);
    f.proj[m] = kernels::matmul(f.feats[m], p.proj_w[m]);
    add_row_broadcast(f.proj[m], p.proj_b[m]);
    const std::size_t cd = p.sid_tables[m][0].cols();
    f.sid_sum[m] = Matrix(u, cd);
    for (std::size_t r = 0; r < u; ++r) {
      const auto& sid = inputs.sids[f.items[r]][m];
      for (std::size_t l = 0; l < sid.size(); ++l) {
        if (sid[l] >= p.sid_tables[m][l].rows()) {
          throw InvalidArgument("item " + std::to_string(f.items[r]) + " has out-of-range " + rq::kModalityTags[m] + " ID");
        }
        const auto row = p.sid_tables[m][l].row(sid[l]);
        for (std::size_t c = 0; c < cd; ++c) f.sid_sum[m](r, c) += row[c];
      }
    }
  }
  const std::size_t k = cfg.tokens_per_item();
  f.tokens = Matrix(u * k, d);
  if (cfg.token_mode == TokenMode::kFused) {
    const std::array<Matrix, 6> parts = {f.proj[0], f.proj[1], f.proj[2], f.sid_sum[0], f.sid_sum[1], f.sid_sum[2]};
    auto fw = mlp_forward(p.token_mlp[0], hconcat(parts));
    f.tokens = std::move(fw.output);
    f.token_cache.push_back(std::move(fw.cache));
  } else {
    for (std::size_t m = 0; m < kModalities; ++m) {
      const std::array<Matrix, 2> parts = {f.proj[m], f.sid_sum[m]};
      auto fw = mlp_forward(p.token_mlp[m], hconcat(parts));
      for (std::size_t r = 0; r < u; ++r) {
        std::copy(fw.output.row(r).begin(), fw.output.row(r).end(), f.tokens.row(r * k + m).begin());
      }
      f.token_cache.push_back(std::move(fw.cache));
    }
  }
  Matrix q(u, 1);
  for (std::size_t r = 0; r < u; ++r) q(r, 0) = inputs.freq[f.items[r]];
  auto gw = mlp_forward(p.g, q);
  f.weights = std::move(gw.output);
  f.g_cache = std::move(gw.cache);
  if (cfg.softmax_weights) {
    for (std::size_t r = 0; r < u; ++r) {
      auto row = f.weights.row(r);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double& v : row) z += (v = std::exp(v - mx));
      for (double& v : row) v /= z;
    }
  }
  return f;
}

void item_backward(const RecModel& model, const ItemInputs& inputs, const ItemForward& f, const Matrix& dtokens,
                   std::array<Matrix, kModalities>& dproj, Matrix& dweights, RecParams& grads) {
  const RecParams& p = model.params;
  const auto& cfg = model.config;
  const std::size_t u = f.items.size(), d = cfg.d_model, k = cfg.tokens_per_item();
  std::array<Matrix, kModalities> dsid;
  if (cfg.token_mode == TokenMode::kFused) {
    GradStore gs = mlp_backward(p.token_mlp[0], f.token_cache[0], dtokens);
    add_mlp_grads(grads.token_mlp[0], gs);
    std::size_t off = kModalities * d;
    for (std::size_t m = 0; m < kModalities; ++m) {
      dproj[m] += gs.input.slice_cols(m * d, d);
      dsid[m] = gs.input.slice_cols(off, f.sid_sum[m].cols());
      off += f.sid_sum[m].cols();
    }
  } else {
    for (std::size_t m = 0; m < kModalities; ++m) {
      Matrix dt(u, d);
      for (std::size_t r = 0; r < u; ++r) std::copy(dtokens.row(r * k + m).begin(), dtokens.row(r * k + m).end(), dt.row(r).begin());
      GradStore gs = mlp_backward(p.token_mlp[m], f.token_cache[m], dt);
      add_mlp_grads(grads.token_mlp[m], gs);
      dproj[m] += gs.input.slice_cols(0, d);
      dsid[m] = gs.input.slice_cols(d, f.sid_sum[m].cols());
    }
  }
  for (std::size_t m = 0; m < kModalities; ++m) {
    // E_j enters only as data: its rows are read but never updated
    grads.proj_w[m] += kernels::matmul_tn(f.feats[m], dproj[m]);
    grads.proj_b[m] += column_sums(dproj[m]);
    for (std::size_t r = 0; r < u; ++r) {
      const auto& sid = inputs.sids[f.items[r]][m];
      for (std::size_t l = 0; l < sid.size(); ++l) {
        auto dst = grads.sid_tables[m][l].row(sid[l]);
        const auto src = dsid[m].row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    }
  }
  Matrix draw = dweights;
  if (cfg.softmax_weights) {
    for (std::size_t r = 0; r < u; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += f.weights(r, c) * dweights(r, c);
      for (std::size_t c = 0; c < 4; ++c) draw(r, c) = f.weights(r, c) * (dweights(r, c) - s);
    }
  }
  add_mlp_grads(grads.g, mlp_backward(p.g, f.g_cache, draw));
}

struct BlockCache {
  LayerNormCache ln1, ln2;
  LinearCache q, k, v, o, up, down;
  AttentionCache att;
  Matrix up_pre;
};

struct BackboneCache {
  std::vector<BlockCache> blocks;
  LayerNormCache lnf;
};

LoraView lora_view(const RecModel& model, const Matrix& a, const Matrix& b) {
  if (!model.config.lora) return {};
  return LoraView{&a, &b, model.lora_scale()};
}

Matrix backbone_forward(const RecModel& model, const Matrix& tokens, BackboneCache& cache) {
  const RecParams& p = model.params;
  if (tokens.rows() > p.pos.rows()) {
    throw DimensionError("backbone: sequence of " + std::to_string(tokens.rows()) + " tokens exceeds " +
                         std::to_string(p.pos.rows()) + " positions");
  }
  Matrix x = tokens;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) += p.pos(r, c);
  cache.blocks.assign(p.blocks.size(), BlockCache{});
  const Matrix none;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const Block& blk = p.blocks[b];
    BlockCache& c = cache.blocks[b];
    const Matrix a = layer_norm_forward(x, blk.ln1_gain, blk.ln1_bias, c.ln1);
    const Matrix q = linear_forward(a, blk.wq, none, {}, c.q);
    const Matrix k = linear_forward(a, blk.wk, none, {}, c.k);
    const Matrix v = linear_forward(a, blk.wv, none, {}, c.v);
    const Matrix att = causal_attention_forward(q, k, v, model.config.heads, c.att);
    x += linear_forward(att, blk.wo, none, {}, c.o);
    const Matrix h = layer_norm_forward(x, blk.ln2_gain, blk.ln2_bias, c.ln2);
    c.up_pre = linear_forward(h, blk.up_w, blk.up_bias, lora_view(model, blk.up_a, blk.up_b), c.up);
    Matrix act = c.up_pre;
    for (double& v2 : act.flat()) v2 = std::max(v2, 0.0);
    x += linear_forward(act, blk.down_w, blk.down_bias, lora_view(model, blk.down_a, blk.down_b), c.down);
  }
  return layer_norm_forward(x, p.lnf_gain, p.lnf_bias, cache.lnf);
}

// Returns d loss / d tokens.
Matrix backbone_backward(const RecModel& model, const BackboneCache& cache, const Matrix& dout, RecParams& g,
                         bool base_grads) {
  const RecParams& p = model.params;
  auto base = [&](Matrix& m) { return base_grads ? &m : nullptr; };
  Matrix dx = layer_norm_backward(dout, p.lnf_gain, cache.lnf, base(g.lnf_gain), base(g.lnf_bias));
  for (std::size_t bi = p.blocks.size(); bi-- > 0;) {
    const Block& blk = p.blocks[bi];
    Block& gb = g.blocks[bi];
    const BlockCache& c = cache.blocks[bi];
    const bool lora = model.config.lora;
    Matrix dact = linear_backward(dx, blk.down_w, lora_view(model, blk.down_a, blk.down_b), c.down, base(gb.down_w),
                                  base(gb.down_bias), lora ? &gb.down_a : nullptr, lora ? &gb.down_b : nullptr);
    for (std::size_t i = 0; i < dact.size(); ++i) {
      if (c.up_pre.flat()[i] <= 0.0) dact.flat()[i] = 0.0;
    }
    const Matrix dh = linear_backward(dact, blk.up_w, lora_view(model, blk.up_a, blk.up_b), c.up, base(gb.up_w),
                                      base(gb.up_bias), lora ? &gb.up_a : nullptr, lora ? &gb.up_b : nullptr);
    dx += layer_norm_backward(dh, blk.ln2_gain, c.ln2, base(gb.ln2_gain), base(gb.ln2_bias));
    const Matrix datt = linear_backward(dx, blk.wo, {}, c.o, base(gb.wo), nullptr, nullptr, nullptr);
    Matrix dq, dk, dv;
    causal_attention_backward(datt, c.att, dq, dk, dv);
    Matrix da = linear_backward(dq, blk.wq, {}, c.q, base(gb.wq), nullptr, nullptr, nullptr);
    da += linear_backward(dk, blk.wk, {}, c.k, base(gb.wk), nullptr, nullptr, nullptr);
    da += linear_backward(dv, blk.wv, {}, c.v, base(gb.wv), nullptr, nullptr, nullptr);
    dx += layer_norm_backward(da, blk.ln1_gain, c.ln1, base(gb.ln1_gain), base(gb.ln1_bias));
  }
  if (base_grads) {
    for (std::size_t r = 0; r < dx.rows(); ++r)
      for (std::size_t c = 0; c < dx.cols(); ++c) g.pos(r, c) += dx(r, c);
  }
  return dx;
}

Matrix sequence_tokens(const RecModel& model, const Matrix& item_tokens, std::span<const std::size_t> rows) {
  const std::size_t k = model.config.tokens_per_item();
  Matrix x(rows.size() * k, model.config.d_model);
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t s = 0; s < k; ++s) {
      const auto src = item_tokens.row(rows[t] * k + s);
      std::copy(src.begin(), src.end(), x.row(t * k + s).begin());
    }
  return x;
}

}  // namespace

Matrix backbone_hidden(const RecModel& model, const Matrix& tokens) {
  BackboneCache cache;
  return backbone_forward(model, tokens, cache);
}

ItemTables precompute_items(const RecModel& model, const ItemInputs& inputs) {
  std::vector<std::uint32_t> all(inputs.items());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
  ItemForward f = item_forward(model, inputs, std::move(all));
  ItemTables t;
  t.tokens = std::move(f.tokens);
  t.proj = std::move(f.proj);
  t.weights = std::move(f.weights);
  return t;
}

Matrix sequence_tokens(const RecModel& model, const ItemTables& tables, std::span<const std::uint32_t> items) {
  std::vector<std::size_t> rows(items.begin(), items.end());
  return sequence_tokens(model, tables.tokens, rows);
}

std::vector<double> score_all(const RecModel& model, const ItemTables& tables, std::span<const double> o) {
  const Matrix om = Matrix::row_vector(o);
  const Matrix sx = kernels::matmul_nt(om, model.params.e_x);
  std::array<Matrix, kModalities> sm;
  for (std::size_t m = 0; m < kModalities; ++m) sm[m] = kernels::matmul_nt(om, tables.proj[m]);
  std::vector<double> s(sx.cols());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double v = tables.weights(i, 0) * sx(0, i);
    for (std::size_t m = 0; m < kModalities; ++m) v += tables.weights(i, m + 1) * sm[m](0, i);
    s[i] = v;
  }
  return s;
}

Matrix build_item_token(const RecModel& model, const ItemInputs& inputs, std::uint32_t item) {
  return item_forward(model, inputs, {item}).tokens;
}

std::array<double, 4> fusion_weights(const RecModel& model, double q) {
  const Matrix raw = mlp_apply(model.params.g, Matrix(1, 1, q));
  std::array<double, 4> w{};
  for (std::size_t c = 0; c < 4; ++c) w[c] = raw(0, c);
  if (model.config.softmax_weights) {
    const double mx = *std::max_element(w.begin(), w.end());
    double z = 0.0;
    for (double& v : w) z += (v = std::exp(v - mx));
    for (double& v : w) v /= z;
  }
  return w;
}

double fused_score(const RecModel& model, const ItemInputs& inputs, std::span<const double> o, std::uint32_t item) {
  const RecParams& p = model.params;
  if (o.size() != model.config.d_model) {
    throw DimensionError("fused_score: hidden state has dim " + std::to_string(o.size()) + ", expected " +
                         std::to_string(model.config.d_model));
  }
  if (item >= p.e_x.rows() || item >= inputs.items()) throw InvalidArgument("fused_score: item " + std::to_string(item) + " outside catalog");
  const auto w = fusion_weights(model, inputs.freq[item]);
  double s = w[0] * dot(o, p.e_x.row(item));
  for (std::size_t m = 0; m < kModalities; ++m) {
    const Matrix pr = [&] {
      Matrix r = kernels::matmul(Matrix::row_vector(inputs.tables[m]->row(item)), p.proj_w[m]);
      add_row_broadcast(r, p.proj_b[m]);
      return r;
    }();
    if (pr.cols() != o.size()) throw DimensionError("fused_score: projected target dim mismatch");
    s += w[m + 1] * dot(o, pr.row(0));
  }
  return s;
}

std::size_t RecBatch::label_count() const {
  std::size_t n = 0;
  for (const auto& e : examples)
    for (const auto& c : e.candidates) n += c.size();
  return n;
}

double batch_loss(const RecModel& model, const ItemInputs& inputs, const RecBatch& batch, RecParams* grads,
                  bool base_grads) {
  const auto& cfg = model.config;
  const RecParams& p = model.params;
  const std::size_t total_labels = batch.label_count();
  if (total_labels == 0) throw InvalidArgument("recommender batch has no labels");

  std::vector<std::uint32_t> uniq;
  for (const auto& e : batch.examples) {
    if (e.candidates.size() != e.input.size()) throw InvalidArgument("example needs one candidate list per input item");
    uniq.insert(uniq.end(), e.input.begin(), e.input.end());
    for (const auto& c : e.candidates) uniq.insert(uniq.end(), c.begin(), c.end());
  }
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  const ItemForward f = item_forward(model, inputs, uniq);
  auto row_of = [&](std::uint32_t item) {
    return static_cast<std::size_t>(std::lower_bound(uniq.begin(), uniq.end(), item) - uniq.begin());
  };

  const std::size_t u = uniq.size(), d = cfg.d_model, k = cfg.tokens_per_item();
  Matrix dtokens, dweights;
  std::array<Matrix, kModalities> dproj;
  if (grads) {
    dtokens = Matrix(u * k, d);
    dweights = Matrix(u, 4);
    for (auto& m : dproj) m = Matrix(u, d);
  }

  double loss = 0.0;
  for (const auto& e : batch.examples) {
    std::vector<std::size_t> rows(e.input.size());
    for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = row_of(e.input[t]);
    BackboneCache cache;
    const Matrix h = backbone_forward(model, sequence_tokens(model, f.tokens, rows), cache);

    std::vector<double> logits, labels;
    for (std::size_t t = 0; t < e.candidates.size(); ++t) {
      const auto o = h.row(t * k + k - 1);
      for (std::size_t ci = 0; ci < e.candidates[t].size(); ++ci) {
        const std::uint32_t item = e.candidates[t][ci];
        const std::size_t r = row_of(item);
        double s = f.weights(r, 0) * dot(o, p.e_x.row(item));
        for (std::size_t m = 0; m < kModalities; ++m) s += f.weights(r, m + 1) * dot(o, f.proj[m].row(r));
        logits.push_back(s);
        labels.push_back(ci == 0 ? 1.0 : 0.0);
      }
    }
    const auto b = losses::bce(logits, labels);
    const double scale = static_cast<double>(logits.size()) / static_cast<double>(total_labels);
    loss += b.value * scale;
    if (!grads) continue;

    Matrix dh(h.rows(), h.cols());
    std::size_t idx = 0;
    for (std::size_t t = 0; t < e.candidates.size(); ++t) {
      const std::size_t pos = t * k + k - 1;
      const auto o = h.row(pos);
      auto dout = dh.row(pos);
      for (const std::uint32_t item : e.candidates[t]) {
        const double dl = b.grad[idx++] * scale;
        const std::size_t r = row_of(item);
        const auto ex = p.e_x.row(item);
        auto gex = grads->e_x.row(item);
        const double wx = f.weights(r, 0);
        dweights(r, 0) += dl * dot(o, ex);
        for (std::size_t c = 0; c < d; ++c) {
          dout[c] += dl * wx * ex[c];
          gex[c] += dl * wx * o[c];
        }
        for (std::size_t m = 0; m < kModalities; ++m) {
          const double wm = f.weights(r, m + 1);
          const auto pr = f.proj[m].row(r);
          auto dpr = dproj[m].row(r);
          dweights(r, m + 1) += dl * dot(o, pr);
          for (std::size_t c = 0; c < d; ++c) {
            dout[c] += dl * wm * pr[c];
            dpr[c] += dl * wm * o[c];
          }
        }
      }
    }
    const Matrix dx = backbone_backward(model, cache, dh, *grads, base_grads);
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t s = 0; s < k; ++s) {
        auto dst = dtokens.row(rows[t] * k + s);
        const auto src = dx.row(t * k + s);
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
  }
  if (grads) item_backward(model, inputs, f, dtokens, dproj, dweights, *grads);
  return loss;
}

bool is_trainable(const RecConfig& cfg, const std::string& name) {
  return !(cfg.lora && starts_with(name, "backbone/base/"));
}

std::vector<ParamRef> trainable_refs(RecModel& model, RecParams& grads) {
  auto values = model.params.named();
  auto gs = grads.named();
  if (values.size() != gs.size()) throw DimensionError("gradient store does not match parameters");
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].first != gs[i].first || !values[i].second->same_shape(*gs[i].second)) {
      throw DimensionError("gradient store does not match parameter '" + values[i].first + "'");
    }
    if (is_trainable(model.config, values[i].first)) refs.push_back({values[i].first, values[i].second, gs[i].second});
  }
  return refs;
}

double ParameterCounts::backbone_fraction() const {
  const std::size_t denom = backbone_base + adapters;
  return denom == 0 ? 0.0 : static_cast<double>(adapters) / static_cast<double>(denom);
}

double ParameterCounts::overall_fraction() const {
  return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
}

ParameterCounts count_parameters(const RecModel& model) {
  ParameterCounts c;
  for (const auto& [name, m] : model.params.named()) {
    c.total += m->size();
    if (is_trainable(model.config, name)) c.trainable += m->size();
    if (starts_with(name, "backbone/base/")) c.backbone_base += m->size();
    if (starts_with(name, "backbone/lora/")) c.adapters += m->size();
  }
  return c;
}

void save_recommender(const std::filesystem::path& path, const RecModel& model) {
  std::vector<NamedTensor> t;
  for (const auto& [name, m] : model.params.named()) t.push_back({name, *m});
  save_checkpoint(path, t);
}

std::vector<std::uint8_t> encode_backbone_base(const RecModel& model) {
  std::vector<NamedTensor> t;
  for (const auto& [name, m] : model.params.named()) {
    if (starts_with(name, "backbone/base/")) t.push_back({name, *m});
  }
  return encode_checkpoint(t);
}

RecModel load_recommender(const std::filesystem::path& path, const RecConfig& cfg,
                          const std::array<std::size_t, kModalities>& input_dims, std::size_t items,
                          const std::array<std::size_t, kModalities>& levels) {
  const auto tensors = load_checkpoint(path);
  std::vector<rq::ExportedCodes> shapes;
  for (std::size_t m = 0; m < kModalities; ++m) {
    for (std::size_t l = 0; l < levels[m]; ++l) {
      const Matrix& src = find_tensor(tensors, std::string("tokenizer/sid/") + rq::kModalityTags[m] + "/" + std::to_string(l));
      rq::ExportedCodes e;
      e.modality = m;
      e.level = l;
      e.table.data = Matrix(src.rows(), src.cols());
      shapes.push_back(std::move(e));
    }
  }
  Rng scratch(0);
  RecModel model = create_recommender(cfg, input_dims, items, shapes, scratch);
  for (auto& [name, m] : model.params.named()) {
    const Matrix& src = find_tensor(tensors, name);
    if (!src.same_shape(*m)) {
      throw DimensionError("recommender checkpoint: '" + name + "' has shape " + src.shape_string() + ", expected " +
                           m->shape_string());
    }
    *m = src;
  }
  return model;
}

}  // namespace mmq::seqrec
