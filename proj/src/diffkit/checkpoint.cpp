// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/diffkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mmq/diffkit/error.hpp"

namespace mmq {

namespace bytes {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint8_t Reader::u8() {
  if (!has(1)) throw IoError("unexpected end of data");
  return data_[pos_++];
}

std::uint32_t Reader::u32() {
  if (!has(4)) throw IoError("unexpected end of data");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  if (!has(8)) throw IoError("unexpected end of data");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> Reader::take(std::size_t n) {
  if (!has(n)) throw IoError("unexpected end of data");
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace bytes

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  bytes::put_u32(out, kCheckpointVersion);
  for (const auto& t : tensors) {
    if (!t.value.all_finite()) throw NumericError("checkpoint: tensor '" + t.name + "' has non-finite entries");
    bytes::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    bytes::put_u64(out, t.value.rows());
    bytes::put_u64(out, t.value.cols());
    for (double v : t.value.flat()) bytes::put_f64(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  if (!r.has(8) || std::memcmp(r.take(4).data(), kCheckpointMagic, 4) != 0) {
    throw IoError("checkpoint: bad magic (expected MMQK)");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  std::vector<NamedTensor> out;
  while (r.remaining() > 0) {
    try {
      NamedTensor t;
      const auto len = r.u32();
      auto name = r.take(len);
      t.name.assign(name.begin(), name.end());
      const auto rows = r.u64();
      const auto cols = r.u64();
      if (cols != 0 && rows > r.remaining() / 8 / cols) throw IoError("payload");
      std::vector<double> values(rows * cols);
      for (double& v : values) v = r.f64();
      t.value = Matrix(rows, cols, std::move(values));
      out.push_back(std::move(t));
    } catch (const IoError&) {
      throw IoError("checkpoint: truncated record " + std::to_string(out.size()));
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  bytes::write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(bytes::read_file(path));
}

const Matrix& find_tensor(std::span<const NamedTensor> tensors, std::string_view name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw IoError("checkpoint: missing tensor '" + std::string(name) + "'");
}

void append_mlp_tensors(std::vector<NamedTensor>& out, const std::string& prefix, const MlpParams& params) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    out.push_back({prefix + "/" + std::to_string(l) + "/weight", params.layers[l].weight});
    out.push_back({prefix + "/" + std::to_string(l) + "/bias", params.layers[l].bias});
  }
}

void load_mlp_tensors(std::span<const NamedTensor> tensors, const std::string& prefix, MlpParams& params) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    for (auto [suffix, dst] : {std::pair{"/weight", &params.layers[l].weight}, std::pair{"/bias", &params.layers[l].bias}}) {
      const std::string name = prefix + "/" + std::to_string(l) + suffix;
      const Matrix& src = find_tensor(tensors, name);
      if (!src.same_shape(*dst)) {
        throw DimensionError("checkpoint: tensor '" + name + "' has shape " + src.shape_string() + ", expected " +
                             dst->shape_string());
      }
      *dst = src;
    }
  }
}

}  // namespace mmq
