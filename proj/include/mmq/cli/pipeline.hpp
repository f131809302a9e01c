// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmq/cli/config.hpp"
#include "mmq/dataio.hpp"
#include "mmq/diagnostics.hpp"
#include "mmq/quantizer.hpp"
#include "mmq/seqrec/model.hpp"
#include "mmq/seqrec/train.hpp"

// Two-stage pipeline (quantizer, then recommender) and the experiment
// recipes behind the `mmq` subcommands.
namespace mmq::cli {

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path table(std::size_t modality) const;
  std::filesystem::path interactions() const { return data_dir() / "interactions.jsonl"; }
  std::filesystem::path quantizer_dir(rq::ReconLoss recon) const { return root / ("quantizer_" + rq::to_string(recon)); }
  std::filesystem::path diagnostics_dir() const { return root / "diagnostics"; }
  std::filesystem::path rec_dir(seqrec::SidInit init) const { return root / ("rec_" + seqrec::to_string(init)); }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

struct ArtifactRecord {
  std::string path;  // relative to the run directory
  std::string crc32;
  std::uintmax_t bytes = 0;
};

struct StageRecord {
  std::string config_hash;
  std::string started;
  std::string finished;
  std::vector<ArtifactRecord> artifacts;
};

struct RunManifest {
  std::string library_version;
  std::map<std::string, StageRecord> stages;

  nlohmann::ordered_json to_json() const;
  /// Empty manifest when the file does not exist.
  static RunManifest load(const std::filesystem::path& path);
  /// Throws IoError if a referenced artifact is missing.
  void save(const std::filesystem::path& root) const;
};

/// CRC-32 of a file's bytes, 8 hex digits.
std::string file_checksum(const std::filesystem::path& path);

struct Corpus {
  std::array<data::EmbeddingTable, rq::kModalities> tables;
  data::InteractionDataset interactions;
  data::SplitDataset split;

  std::array<const Matrix*, rq::kModalities> matrices() const;
  std::array<std::size_t, rq::kModalities> dims() const;
};

/// Generates the synthetic corpus or loads the configured files.
Corpus build_corpus(const RunConfig& resolved);
/// Reads the corpus written by gen-data.
Corpus load_corpus(const RunPaths& paths);

struct QuantizerRun {
  rq::TrainResult train;
  std::vector<rq::SemanticIdAssignment> ids;
  std::vector<rq::ExportedCodes> codes;
  rq::LossBreakdown initial;
  rq::LossBreakdown final;
};

QuantizerRun run_quantizer(const Corpus& corpus, const rq::QuantizerConfig& cfg);

/// ẑ of one modality as an items × d matrix.
Matrix quantized_matrix(std::span<const rq::SemanticIdAssignment> ids, std::size_t modality);

/// Tau between behavior–target distances of E_c and of `embeddings`.
diag::ForgettingReport forgetting_vs_collaborative(const Corpus& corpus, const Matrix& embeddings,
                                                   diag::DistanceMetric metric);

struct CollapseComparison {
  diag::CollapseReport multimodal;  // fused item tokens
  diag::CollapseReport projection;  // E_c·W_c + b_c
  diag::RankBound bound;
};

CollapseComparison compare_collapse(const seqrec::RecModel& model, const seqrec::ItemInputs& inputs,
                                    const Matrix& collaborative, double threshold);

seqrec::ItemInputs item_inputs(const Corpus& corpus, std::span<const rq::SemanticIdAssignment> ids);

struct RecRun {
  seqrec::RecModel model;
  seqrec::TrainTrace trace;
  seqrec::EvalResult eval;
  diag::ForgettingReport forgetting;  // Σ_l E_SID_c after training vs E_c
  diag::ForgettingReport forgetting_initial;
  seqrec::ParameterCounts params;
  bool base_unchanged = false;
};

RecRun run_recommender(const Corpus& corpus, std::span<const rq::SemanticIdAssignment> ids,
                       std::span<const rq::ExportedCodes> codes, const seqrec::RecConfig& cfg,
                       diag::DistanceMetric metric);

nlohmann::ordered_json to_json(const CollapseComparison& c);
nlohmann::ordered_json to_json(const seqrec::ParameterCounts& p);

// Subcommands. Each writes into cfg.out, updates the manifest and returns a
// summary; `log` receives human-readable progress.
nlohmann::ordered_json cmd_gen_data(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json cmd_train_quantizer(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json cmd_diagnose(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json cmd_train_rec(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json cmd_report(const RunConfig& cfg, std::ostream& log);

/// Runs a subcommand and maps failures to the exit-code contract:
/// 0 success, 2 config, 3 numeric, 4 I/O, 1 anything else.
int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log, std::ostream& err);

}  // namespace mmq::cli
