// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "mmq/dataio.hpp"
#include "mmq/diffkit/rng.hpp"
#include "mmq/seqrec/model.hpp"

namespace mmq::seqrec {

/// Training sequence of one user: behavior plus training target, keeping the
/// last max_len + 1 items. Input t predicts item t + 1.
std::vector<std::uint32_t> training_sequence(const data::SplitUser& user, std::size_t max_len);

/// Evaluation input: behavior plus training target, last max_len items.
std::vector<std::uint32_t> evaluation_input(const data::SplitUser& user, std::size_t max_len);

/// Builds one example per user with `negatives` uniform negatives per position
/// (never equal to that position's positive).
RecBatch sample_batch(const data::SplitDataset& split, std::span<const std::size_t> users, const RecConfig& cfg,
                      Rng& rng);

struct TrainTrace {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
};

/// AdamW with linear warm-up. With LoRA on, backbone base tensors never change.
TrainTrace train_recommender(RecModel& model, const ItemInputs& inputs, const data::SplitDataset& split);

struct EvalResult {
  std::vector<std::size_t> ks;
  std::map<std::size_t, double> hr;
  std::map<std::size_t, double> ndcg;
  std::size_t users = 0;
  std::vector<std::size_t> ranks;  // per user, in split order
};

/// 1-based rank of `target`: items with a higher score come first, equal
/// scores are ordered by item id.
std::size_t rank_of(std::span<const double> scores, std::size_t target);

EvalResult metrics_from_ranks(std::span<const std::size_t> ranks, std::span<const std::size_t> ks);

/// Full-catalog ranking of each user's test target.
EvalResult evaluate(const RecModel& model, const ItemInputs& inputs, const data::SplitDataset& split,
                    std::span<const std::size_t> ks = std::span<const std::size_t>());

nlohmann::ordered_json to_json(const EvalResult& r);

/// Σ_l E_{SID^l} rows for one modality (items × d).
Matrix sid_embedding_matrix(const RecModel& model, const ItemInputs& inputs, std::size_t modality);

}  // namespace mmq::seqrec
