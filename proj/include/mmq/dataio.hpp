// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mmq/diffkit/error.hpp"
#include "mmq/diffkit/matrix.hpp"
#include "mmq/diffkit/rng.hpp"

namespace mmq::data {

enum class Modality : std::uint8_t {
  kCollaborative = 0,  // "c"
  kText = 1,           // "t"
  kVisual = 2,         // "v"
  kTarget = 3,         // "x"
  kCode = 4,           // "code"
};

std::string to_string(Modality m);
Modality parse_modality(const std::string& tag);

struct EmbeddingTable {
  Modality modality = Modality::kCollaborative;
  Matrix data;
  std::string provenance;

  std::size_t rows() const { return data.rows(); }
  std::size_t dim() const { return data.cols(); }
};

// Embedding table file (little-endian):
//   "MMQE" | version u32 | modality u8 | rows u64 | cols u64 | rows*cols f64 | crc32 u32
// The CRC covers every preceding byte.
inline constexpr std::uint32_t kTableVersion = 1;

enum class TableErrorCode {
  kBadMagic,
  kBadVersion,
  kBadModality,
  kTruncatedPayload,
  kChecksumMismatch,
  kNonFinite,
  kTrailingBytes,
};

std::string to_string(TableErrorCode code);

class TableError : public IoError {
 public:
  TableError(TableErrorCode code, const std::string& detail)
      : IoError("embedding table: " + to_string(code) + (detail.empty() ? "" : " (" + detail + ")")), code_(code) {}
  TableErrorCode code() const noexcept { return code_; }

 private:
  TableErrorCode code_;
};

std::vector<std::uint8_t> encode_table(const EmbeddingTable& table);
EmbeddingTable decode_table(std::span<const std::uint8_t> bytes);
/// CRC-32 (zlib polynomial) of a byte buffer.
std::uint32_t checksum_crc32(std::span<const std::uint8_t> bytes);

void save_table(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable load_table(const std::filesystem::path& path);

struct UserSequence {
  std::uint64_t user = 0;
  std::vector<std::uint32_t> items;
};

struct InteractionDataset {
  std::size_t item_count = 0;
  std::vector<UserSequence> users;
};

/// JSON lines, one {"user": u64, "items": [u64, ...]} object per line.
void save_interactions(const std::filesystem::path& path, const InteractionDataset& data);
InteractionDataset load_interactions(const std::filesystem::path& path, std::size_t item_count);

/// One user after the leave-last-out split: for a sequence of length N the
/// item at index N−2 is the training target and N−1 the test target.
struct SplitUser {
  std::uint64_t user = 0;
  std::vector<std::uint32_t> behavior;
  std::uint32_t train_target = 0;
  std::uint32_t test_target = 0;
};

struct SplitDataset {
  std::size_t item_count = 0;
  std::vector<SplitUser> users;
  /// Occurrences of each item in the training portion (behavior + train target).
  std::vector<std::uint64_t> train_counts;
  /// Sequences shorter than three items, dropped by the split.
  std::size_t excluded = 0;
};

SplitDataset split_leave_last_out(const InteractionDataset& data);

struct CorpusStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  /// 1 − interactions / (users × items).
  double sparsity = 0.0;
};

CorpusStats corpus_stats(const InteractionDataset& data);

struct SynthConfig {
  std::size_t items = 1000;
  std::size_t users = 2000;
  std::size_t latent_dim = 8;
  std::size_t dim_c = 16;
  std::size_t dim_t = 32;
  std::size_t dim_v = 32;
  double noise_c = 0.05;
  double noise_t = 0.1;
  double noise_v = 0.1;
  std::size_t min_len = 5;
  std::size_t max_len = 20;
  /// Softmax temperature over −‖z_a − z_b‖; +inf gives a uniform walk.
  double markov_temperature = 0.35;
  /// Copy the collaborative mixing into the first rows of the textual one.
  bool share_ct_mixing = false;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SynthCorpus {
  EmbeddingTable c;
  EmbeddingTable t;
  EmbeddingTable v;
  InteractionDataset interactions;
  Matrix latent;  // items × latent_dim
};

SynthCorpus generate_synth(const SynthConfig& cfg);

/// Next-item sampler of the synthetic walk: from item a, item b ≠ a is drawn
/// with probability ∝ exp(−‖z_a − z_b‖ / T).
class MarkovWalker {
 public:
  MarkovWalker(const Matrix& latent, double temperature);
  std::uint32_t next(std::uint32_t current, Rng& rng) const;

 private:
  const Matrix& latent_;
  double temperature_;
};

}  // namespace mmq::data
