// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmq/diffkit/matrix.hpp"
#include "mmq/diffkit/mlp.hpp"
#include "mmq/diffkit/rng.hpp"
#include "mmq/quantizer.hpp"

// Multimodal sequential recommender: item tokenizer, causal transformer with
// optional LoRA adapters, and the frequency-aware fusion head.
namespace mmq::seqrec {

inline constexpr std::size_t kModalities = rq::kModalities;

enum class TokenMode { kFused, kPerModality };
TokenMode parse_token_mode(const std::string& name);
std::string to_string(TokenMode m);

enum class SidInit { kCodeEmbeddings, kRandom };
SidInit parse_sid_init(const std::string& name);
std::string to_string(SidInit s);

struct RecConfig {
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 20;
  std::size_t token_hidden = 128;
  TokenMode token_mode = TokenMode::kFused;
  bool lora = true;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  std::size_t g_hidden = 16;
  bool softmax_weights = false;
  SidInit sid_init = SidInit::kCodeEmbeddings;
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  std::size_t negatives = 4;
  std::size_t warmup_steps = 100;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 13;

  void validate() const;
  std::size_t tokens_per_item() const { return token_mode == TokenMode::kFused ? 1 : kModalities; }
};

struct Block {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;
  Matrix ln2_gain, ln2_bias;
  Matrix up_w, up_bias, down_w, down_bias;
  // adapters on the feed-forward projections; empty when LoRA is off
  Matrix up_a, up_b, down_a, down_b;
};

struct RecParams {
  std::array<Matrix, kModalities> proj_w;  // D_j × d_model
  std::array<Matrix, kModalities> proj_b;  // 1 × d_model
  std::array<std::vector<Matrix>, kModalities> sid_tables;  // per level, S × d
  std::vector<MlpParams> token_mlp;  // one (fused) or one per modality
  Matrix pos;                        // positions × d_model
  std::vector<Block> blocks;
  Matrix lnf_gain, lnf_bias;
  MlpParams g;  // 1 → 4 fusion weights (w_x, w_c, w_t, w_v)
  Matrix e_x;   // items × d_model

  /// Every matrix with a stable name. Backbone base tensors are prefixed
  /// "backbone/base/", adapters "backbone/lora/". Empty matrices are skipped.
  std::vector<std::pair<std::string, Matrix*>> named();
  std::vector<std::pair<std::string, const Matrix*>> named() const;
  /// Same layout, every entry zero.
  RecParams zeros_like() const;
};

/// Frozen per-item inputs: modality tables, semantic IDs and frequency feature.
struct ItemInputs {
  std::array<const Matrix*, kModalities> tables{};
  std::vector<std::array<std::vector<std::uint32_t>, kModalities>> sids;  // item → modality → level
  std::vector<double> freq;                                                // q″ per item

  std::size_t items() const { return sids.size(); }
  /// Throws naming (item, modality) on missing rows or IDs.
  void validate(const std::array<std::size_t, kModalities>& levels) const;
};

ItemInputs make_item_inputs(const std::array<const Matrix*, kModalities>& tables,
                            std::span<const rq::SemanticIdAssignment> assignments, std::vector<double> freq);

struct RecModel {
  RecConfig config;
  RecParams params;

  double lora_scale() const { return config.lora_alpha / static_cast<double>(config.lora_rank); }
};

/// `codes` are the exported code tables (modality-major, level order). With
/// SidInit::kRandom they only fix the ID-table shapes and scale.
RecModel create_recommender(const RecConfig& cfg, const std::array<std::size_t, kModalities>& input_dims,
                            std::size_t items, std::span<const rq::ExportedCodes> codes, Rng& rng);

/// q″ = minmax(log(q + 1)); all-equal counts map to 0.5.
std::vector<double> frequency_feature(std::span<const std::uint64_t> counts);

/// Fused input token of one item (tokens_per_item × d_model rows, before positions).
Matrix build_item_token(const RecModel& model, const ItemInputs& inputs, std::uint32_t item);

/// Fusion weights for one item: g(q″), optionally softmax-normalized.
std::array<double, 4> fusion_weights(const RecModel& model, double q);

/// w_x⟨o, E_x[item]⟩ + Σ_j w_j⟨o, E_j[item]·W_j + b_j⟩ with weights g(q″_item).
double fused_score(const RecModel& model, const ItemInputs& inputs, std::span<const double> o, std::uint32_t item);

/// Per-item quantities shared by every user at evaluation time.
struct ItemTables {
  Matrix tokens;                            // (items × tokens_per_item) × d_model
  std::array<Matrix, kModalities> proj;     // items × d_model
  Matrix weights;                           // items × 4
};

ItemTables precompute_items(const RecModel& model, const ItemInputs& inputs);

/// Input tokens of a sequence gathered from precomputed tables.
Matrix sequence_tokens(const RecModel& model, const ItemTables& tables, std::span<const std::uint32_t> items);

/// Fused scores of every catalog item for hidden state `o`.
std::vector<double> score_all(const RecModel& model, const ItemTables& tables, std::span<const double> o);

/// Hidden states after the final LayerNorm for a token sequence (rows = positions).
Matrix backbone_hidden(const RecModel& model, const Matrix& tokens);

/// One training sequence: prediction t scores candidates[t] (positive first)
/// from the state after input item t.
struct Example {
  std::vector<std::uint32_t> input;
  std::vector<std::vector<std::uint32_t>> candidates;
};

struct RecBatch {
  std::vector<Example> examples;
  std::size_t label_count() const;
};

/// Mean BCE over every (position, candidate) label of the batch. When `grads`
/// is non-null it receives the gradient; frozen backbone weights are skipped
/// unless `base_grads` is set.
double batch_loss(const RecModel& model, const ItemInputs& inputs, const RecBatch& batch, RecParams* grads,
                  bool base_grads);

/// Names of parameters updated by training: everything except the backbone
/// base when LoRA is on.
bool is_trainable(const RecConfig& cfg, const std::string& name);

std::vector<ParamRef> trainable_refs(RecModel& model, RecParams& grads);

struct ParameterCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::size_t backbone_base = 0;
  std::size_t adapters = 0;
  /// adapters / (backbone_base + adapters)
  double backbone_fraction() const;
  double overall_fraction() const;
};

ParameterCounts count_parameters(const RecModel& model);

void save_recommender(const std::filesystem::path& path, const RecModel& model);
/// Backbone base tensors only; used to verify LoRA leaves them untouched.
std::vector<std::uint8_t> encode_backbone_base(const RecModel& model);
RecModel load_recommender(const std::filesystem::path& path, const RecConfig& cfg,
                          const std::array<std::size_t, kModalities>& input_dims, std::size_t items,
                          const std::array<std::size_t, kModalities>& levels);

}  // namespace mmq::seqrec
