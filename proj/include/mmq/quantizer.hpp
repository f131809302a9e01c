// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmq/dataio.hpp"
#include "mmq/diffkit/matrix.hpp"
#include "mmq/diffkit/mlp.hpp"
#include "mmq/diffkit/rng.hpp"
#include "mmq/losses.hpp"

// Multimodal residual quantizer: one encoder / L-level codebook / decoder
// branch per modality (c, t, v).
namespace mmq::rq {

inline constexpr std::size_t kModalities = 3;
inline constexpr std::array<const char*, kModalities> kModalityTags = {"c", "t", "v"};
inline constexpr std::array<data::Modality, kModalities> kModalityKinds = {
    data::Modality::kCollaborative, data::Modality::kText, data::Modality::kVisual};

struct Codebook {
  std::size_t level = 0;
  Matrix codes;  // S × d
  std::vector<std::uint64_t> usage;

  Codebook() = default;
  Codebook(std::size_t level, Matrix codes);
  std::size_t size() const { return codes.rows(); }
  std::size_t dim() const { return codes.cols(); }
  void reset_usage();
};

struct LevelChoice {
  std::size_t sid = 0;
  std::vector<double> next_residual;
};

/// Nearest code by squared distance, ties to the lowest index.
LevelChoice quantize_level(std::span<const double> residual, const Codebook& codebook);

enum class ReconLoss { kMmd, kMse };
ReconLoss parse_recon(const std::string& name);
std::string to_string(ReconLoss r);

enum class CodebookInit { kKMeans, kRandom };
CodebookInit parse_codebook_init(const std::string& name);

struct QuantizerConfig {
  std::array<std::size_t, kModalities> codes = {32, 32, 32};
  std::array<std::size_t, kModalities> levels = {3, 3, 3};
  std::size_t code_dim = 16;
  std::size_t hidden_dim = 64;
  double alpha = 1.0;
  double beta = 1e-3;
  double gamma = 1.0;
  double recon_weight = 1.0;
  double temperature = 0.1;
  ReconLoss recon = ReconLoss::kMmd;
  losses::KernelConfig kernel{1.0, true};
  losses::MmdEstimator estimator = losses::MmdEstimator::kBiased;
  CodebookInit init = CodebookInit::kKMeans;
  std::size_t kmeans_iters = 10;
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double lr = 2e-3;
  double dead_code_noise = 1e-2;
  std::uint64_t seed = 11;

  void validate() const;
};

struct ModalityBranch {
  MlpParams encoder;
  MlpParams decoder;
  std::vector<Codebook> codebooks;
  /// Gaussian bandwidth of the reconstruction MMD, fixed once resolved.
  double sigma = 1.0;
};

struct QuantizerModel {
  QuantizerConfig config;
  std::array<ModalityBranch, kModalities> branches;

  std::size_t input_dim(std::size_t m) const { return branches[m].encoder.input_dim(); }
  std::size_t parameter_count() const;
};

/// Encoder/decoder MLPs (in → hidden → d → hidden → in) and random codebooks.
QuantizerModel create_quantizer(const QuantizerConfig& cfg, const std::array<std::size_t, kModalities>& input_dims,
                                Rng& rng);

struct EncodedItem {
  std::vector<double> z;
  std::vector<std::size_t> sids;
  std::vector<double> zhat;
  std::vector<double> residual;  // z − ẑ after the last level
};

EncodedItem encode_item(const QuantizerModel& model, std::size_t modality, std::span<const double> s);

/// Greedy residual quantization of every row of `z` against `codebooks`.
struct BatchCodes {
  std::vector<std::vector<std::size_t>> sids;  // level → row → sid
  std::vector<Matrix> residuals;               // level → r_{l−1} (rows × d)
  Matrix zhat;
};
BatchCodes quantize_rows(const Matrix& z, std::span<const Codebook> codebooks);

struct LossBreakdown {
  double recon = 0.0;
  double align = 0.0;
  double commitment = 0.0;  // Σ_j over modalities
  double total = 0.0;
};

/// Values captured by the stop-gradient operator for one batch. Holding these
/// fixed turns the batch loss into an ordinary differentiable function of the
/// parameters, which is what both training and gradient checks differentiate.
struct FrozenBatch {
  std::array<Matrix, kModalities> inputs;
  std::array<std::vector<std::vector<std::size_t>>, kModalities> sids;
  std::array<std::vector<Matrix>, kModalities> residuals_sg;
  std::array<std::vector<Matrix>, kModalities> codes_sg;
  std::array<Matrix, kModalities> st_offset;  // SG(ẑ − z)
};

FrozenBatch capture_batch(const QuantizerModel& model, const std::array<Matrix, kModalities>& inputs);

struct QuantizerGrads {
  std::array<GradStore, kModalities> encoder;
  std::array<GradStore, kModalities> decoder;
  std::array<std::vector<Matrix>, kModalities> codes;

  static QuantizerGrads zeros_like(const QuantizerModel& model);
};

/// Loss of the batch under the captured stop-gradient values; fills `grads`
/// when non-null.
LossBreakdown batch_loss(const QuantizerModel& model, const FrozenBatch& frozen, QuantizerGrads* grads);

std::vector<ParamRef> parameter_refs(QuantizerModel& model, QuantizerGrads& grads);

struct EpochTrace {
  std::size_t epoch = 0;
  LossBreakdown loss;
  std::size_t revived_codes = 0;
};

struct TrainResult {
  QuantizerModel model;
  std::vector<EpochTrace> trace;
};

/// Tables must be row-aligned by item id.
TrainResult train_mm_rqvae(const std::array<const Matrix*, kModalities>& tables, const QuantizerConfig& cfg);

/// Re-seeds every code of `codebook` whose usage is zero to `residuals` row
/// picked at random plus Gaussian noise. Returns the number of codes changed.
std::size_t revive_dead_codes(Codebook& codebook, const Matrix& residuals, double noise, Rng& rng);

/// Loss over whole tables (one batch), without gradients.
LossBreakdown evaluate_losses(const QuantizerModel& model, const std::array<const Matrix*, kModalities>& tables);

struct SemanticIdAssignment {
  std::uint64_t item = 0;
  std::array<std::vector<std::uint32_t>, kModalities> sids;
  std::array<std::vector<double>, kModalities> zhat;
};

std::vector<SemanticIdAssignment> assign_ids(const QuantizerModel& model,
                                             const std::array<const Matrix*, kModalities>& tables);

/// {"item": u64, "modality": "c|t|v", "sids": [...]}, three lines per item.
void save_assignments(const std::filesystem::path& path, std::span<const SemanticIdAssignment> assignments);
/// Reads IDs back; ẑ is not stored and is left empty.
std::vector<SemanticIdAssignment> load_assignments(const std::filesystem::path& path);

struct ExportedCodes {
  std::size_t modality = 0;
  std::size_t level = 0;
  data::EmbeddingTable table;
};

std::vector<ExportedCodes> export_code_embeddings(const QuantizerModel& model);
std::string code_table_filename(std::size_t modality, std::size_t level);
void save_code_embeddings(const std::filesystem::path& dir, std::span<const ExportedCodes> codes);
std::vector<ExportedCodes> load_code_embeddings(const std::filesystem::path& dir,
                                                const std::array<std::size_t, kModalities>& levels);

void save_quantizer(const std::filesystem::path& path, const QuantizerModel& model);
/// Shapes come from `cfg` plus the input dims stored in the checkpoint.
QuantizerModel load_quantizer(const std::filesystem::path& path, const QuantizerConfig& cfg);

}  // namespace mmq::rq
