// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmq/diffkit/matrix.hpp"
#include "mmq/diffkit/mlp.hpp"

namespace mmq {

// Parameter checkpoint layout (all integers little-endian):
//   "MMQK" | version u32 | records...
//   record: name_len u32 | name (UTF-8) | rows u64 | cols u64 | rows*cols f64
inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'Q', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Throws IoError if no tensor carries `name`.
const Matrix& find_tensor(std::span<const NamedTensor> tensors, std::string_view name);

void append_mlp_tensors(std::vector<NamedTensor>& out, const std::string& prefix, const MlpParams& params);
/// Copies tensors into an already-shaped MlpParams; shapes must match.
void load_mlp_tensors(std::span<const NamedTensor> tensors, const std::string& prefix, MlpParams& params);

// Little-endian byte helpers shared by the on-disk formats.
namespace bytes {
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}
  bool has(std::size_t n) const { return pos_ + n <= data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::span<const std::uint8_t> take(std::size_t n);

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
}  // namespace bytes

}  // namespace mmq
