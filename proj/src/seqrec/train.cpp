// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/seqrec/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/kernels.hpp"
#include "mmq/diffkit/optim.hpp"

namespace mmq::seqrec {

namespace {
constexpr std::size_t kDefaultKs[] = {5, 10, 20};
}

std::vector<std::uint32_t> training_sequence(const data::SplitUser& user, std::size_t max_len) {
  std::vector<std::uint32_t> full = user.behavior;
  full.push_back(user.train_target);
  if (full.size() > max_len + 1) full.erase(full.begin(), full.end() - static_cast<std::ptrdiff_t>(max_len + 1));
  return full;
}

std::vector<std::uint32_t> evaluation_input(const data::SplitUser& user, std::size_t max_len) {
  std::vector<std::uint32_t> in = user.behavior;
  in.push_back(user.train_target);
  if (in.size() > max_len) in.erase(in.begin(), in.end() - static_cast<std::ptrdiff_t>(max_len));
  return in;
}

RecBatch sample_batch(const data::SplitDataset& split, std::span<const std::size_t> users, const RecConfig& cfg,
                      Rng& rng) {
  if (split.item_count < 2) throw InvalidArgument("negative sampling needs at least two items");
  RecBatch batch;
  for (std::size_t u : users) {
    const auto seq = training_sequence(split.users.at(u), cfg.max_len);
    Example e;
    e.input.assign(seq.begin(), seq.end() - 1);
    for (std::size_t t = 1; t < seq.size(); ++t) {
      std::vector<std::uint32_t> cands = {seq[t]};
      while (cands.size() < cfg.negatives + 1) {
        const auto neg = static_cast<std::uint32_t>(rng.index(split.item_count));
        if (neg != seq[t]) cands.push_back(neg);
      }
      e.candidates.push_back(std::move(cands));
    }
    batch.examples.push_back(std::move(e));
  }
  return batch;
}

TrainTrace train_recommender(RecModel& model, const ItemInputs& inputs, const data::SplitDataset& split) {
  const RecConfig& cfg = model.config;
  cfg.validate();
  if (split.users.empty()) throw InvalidArgument("recommender: no training users");
  TrainTrace trace;
  Rng rng = Rng(cfg.seed).split("rec/train");
  AdamW opt(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  RecParams grads = model.params.zeros_like();
  const auto refs = trainable_refs(model, grads);
  std::vector<std::size_t> order(split.users.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size, ++step, ++batches) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      const RecBatch batch = sample_batch(split, std::span(order).subspan(lo, hi - lo), cfg, rng);
      for (auto& r : refs) r.grad->fill(0.0);
      const double loss = batch_loss(model, inputs, batch, &grads, !cfg.lora);
      if (!std::isfinite(loss)) throw NumericError("recommender: non-finite loss at step " + std::to_string(step));
      const double warm = cfg.warmup_steps == 0 ? 1.0
                                                : std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps));
      opt.set_lr(cfg.lr * warm);
      opt.step(refs);
      trace.step_loss.push_back(loss);
      epoch_loss += loss;
    }
    trace.epoch_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }
  return trace;
}

std::size_t rank_of(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw InvalidArgument("rank_of: target outside score vector");
  const double st = scores[target];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > st || (scores[i] == st && i < target)) ++rank;
  }
  return rank;
}

EvalResult metrics_from_ranks(std::span<const std::size_t> ranks, std::span<const std::size_t> ks) {
  if (ranks.empty()) throw InvalidArgument("evaluation: empty test set");
  if (ks.empty()) ks = kDefaultKs;
  EvalResult r;
  r.ks.assign(ks.begin(), ks.end());
  r.users = ranks.size();
  r.ranks.assign(ranks.begin(), ranks.end());
  for (std::size_t k : ks) {
    double hr = 0.0, nd = 0.0;
    for (std::size_t rank : ranks) {
      if (rank == 0) throw InvalidArgument("evaluation: ranks are 1-based");
      if (rank <= k) {
        hr += 1.0;
        nd += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
      }
    }
    r.hr[k] = hr / static_cast<double>(ranks.size());
    r.ndcg[k] = nd / static_cast<double>(ranks.size());
  }
  return r;
}

EvalResult evaluate(const RecModel& model, const ItemInputs& inputs, const data::SplitDataset& split,
                    std::span<const std::size_t> ks) {
  if (split.users.empty()) throw InvalidArgument("evaluation: empty test set");
  const ItemTables tables = precompute_items(model, inputs);
  const std::size_t k = model.config.tokens_per_item();
  std::vector<std::size_t> ranks(split.users.size());
  const auto n = static_cast<std::ptrdiff_t>(split.users.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic, 16) num_threads(kernels::max_threads())
  for (std::ptrdiff_t ui = 0; ui < n; ++ui) {
    try {
      const auto& u = split.users[static_cast<std::size_t>(ui)];
      const auto in = evaluation_input(u, model.config.max_len);
      const Matrix h = backbone_hidden(model, sequence_tokens(model, tables, in));
      const auto scores = score_all(model, tables, h.row(in.size() * k - 1));
      ranks[static_cast<std::size_t>(ui)] = rank_of(scores, u.test_target);
    } catch (const std::exception& e) {
#pragma omp critical(mmq_eval_failure)
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw InvalidArgument("evaluation failed: " + failure);
  return metrics_from_ranks(ranks, ks);
}

nlohmann::ordered_json to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json hr, nd;
  for (std::size_t k : r.ks) {
    hr[std::to_string(k)] = r.hr.at(k);
    nd[std::to_string(k)] = r.ndcg.at(k);
  }
  j["HR"] = hr;
  j["nDCG"] = nd;
  j["users"] = r.users;
  return j;
}

Matrix sid_embedding_matrix(const RecModel& model, const ItemInputs& inputs, std::size_t modality) {
  const auto& tables = model.params.sid_tables.at(modality);
  Matrix out(inputs.items(), tables.at(0).cols());
  for (std::size_t i = 0; i < inputs.items(); ++i) {
    const auto& sid = inputs.sids[i][modality];
    for (std::size_t l = 0; l < sid.size(); ++l) {
      const auto row = tables.at(l).row(sid[l]);
      for (std::size_t c = 0; c < row.size(); ++c) out(i, c) += row[c];
    }
  }
  return out;
}

}  // namespace mmq::seqrec
