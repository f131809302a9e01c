// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmq/dataio.hpp"
#include "mmq/diagnostics.hpp"
#include "mmq/quantizer.hpp"
#include "mmq/seqrec/model.hpp"

namespace mmq::cli {

enum class CorpusSource { kSynthetic, kFiles };

struct CorpusFiles {
  std::array<std::filesystem::path, rq::kModalities> tables;  // c, t, v
  std::filesystem::path interactions;
};

struct ExperimentConfig {
  /// Root seeds of the repeated directional experiments.
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double effective_rank_threshold = 1e-3;
  diag::DistanceMetric metric = diag::DistanceMetric::kEuclidean;
  /// Quantizers trained by `train-quantizer`; `quantizer.recon` picks the
  /// one that feeds `train-rec`.
  std::vector<rq::ReconLoss> recon_modes = {rq::ReconLoss::kMmd, rq::ReconLoss::kMse};
  /// Initializations run by `train-rec`.
  std::vector<seqrec::SidInit> sid_inits = {seqrec::SidInit::kCodeEmbeddings, seqrec::SidInit::kRandom};
};

/// Everything a run needs. Component seeds are not configurable: they are
/// derived from `seed` and the stage name by `resolved()`.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 7;
  std::filesystem::path out = "runs/desk";
  CorpusSource source = CorpusSource::kSynthetic;
  data::SynthConfig synth;
  CorpusFiles files;
  rq::QuantizerConfig quantizer;
  seqrec::RecConfig recommender;
  ExperimentConfig experiments;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Copy with stage seeds derived from the root seed.
  RunConfig resolved() const;
  /// Canonical JSON (round-trips through parse_config).
  nlohmann::ordered_json to_json() const;
  /// FNV-1a 64 of the canonical JSON, as 16 hex digits.
  std::string hash() const;
};

/// "desk" (default corpus and desk-scale models) or "paper" (published
/// hyperparameters on the same corpus).
RunConfig preset_config(const std::string& name);

/// Starts from the preset named by "preset" (default "desk") and applies
/// every given field. Unknown keys throw ConfigError with the key path.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<rq::ReconLoss> recon;
  std::optional<seqrec::SidInit> init_sids;
};

/// `recon` and `init_sids` restrict the experiment lists to that one value.
void apply_overrides(RunConfig& cfg, const Overrides& o);

std::string to_string(losses::MmdEstimator e);
std::string to_string(rq::CodebookInit i);
std::string to_string(diag::DistanceMetric m);

}  // namespace mmq::cli
