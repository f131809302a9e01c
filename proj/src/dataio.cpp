// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmq/dataio.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "mmq/diffkit/checkpoint.hpp"

namespace mmq::data {

namespace {
constexpr char kMagic[4] = {'M', 'M', 'Q', 'E'};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}
}  // namespace

std::uint32_t checksum_crc32(std::span<const std::uint8_t> bytes) { return crc32_of(bytes); }

std::string to_string(Modality m) {
  switch (m) {
    case Modality::kCollaborative: return "c";
    case Modality::kText: return "t";
    case Modality::kVisual: return "v";
    case Modality::kTarget: return "x";
    case Modality::kCode: return "code";
  }
  return "?";
}

Modality parse_modality(const std::string& tag) {
  if (tag == "c") return Modality::kCollaborative;
  if (tag == "t") return Modality::kText;
  if (tag == "v") return Modality::kVisual;
  if (tag == "x") return Modality::kTarget;
  if (tag == "code") return Modality::kCode;
  throw InvalidArgument("unknown modality tag '" + tag + "'");
}

std::string to_string(TableErrorCode code) {
  switch (code) {
    case TableErrorCode::kBadMagic: return "bad magic";
    case TableErrorCode::kBadVersion: return "unsupported version";
    case TableErrorCode::kBadModality: return "bad modality tag";
    case TableErrorCode::kTruncatedPayload: return "truncated payload";
    case TableErrorCode::kChecksumMismatch: return "checksum mismatch";
    case TableErrorCode::kNonFinite: return "non-finite entry";
    case TableErrorCode::kTrailingBytes: return "trailing bytes";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_table(const EmbeddingTable& table) {
  const auto flat = table.data.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (!std::isfinite(flat[i])) throw TableError(TableErrorCode::kNonFinite, "entry " + std::to_string(i));
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(4 + 4 + 1 + 16 + flat.size() * 8 + 4);
  bytes::put_u32(out, kTableVersion);
  out.push_back(static_cast<std::uint8_t>(table.modality));
  bytes::put_u64(out, table.data.rows());
  bytes::put_u64(out, table.data.cols());
  for (double v : flat) bytes::put_f64(out, v);
  bytes::put_u32(out, crc32_of(out));
  return out;
}

EmbeddingTable decode_table(std::span<const std::uint8_t> data) {
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) throw TableError(TableErrorCode::kBadMagic, "");
  constexpr std::size_t kHeader = 4 + 4 + 1 + 8 + 8;
  if (data.size() < kHeader) throw TableError(TableErrorCode::kTruncatedPayload, "header");
  bytes::Reader r(data.subspan(4));
  const auto version = r.u32();
  if (version != kTableVersion) throw TableError(TableErrorCode::kBadVersion, std::to_string(version));
  const auto tag = r.u8();
  if (tag > static_cast<std::uint8_t>(Modality::kCode)) throw TableError(TableErrorCode::kBadModality, std::to_string(tag));
  const auto rows = r.u64();
  const auto cols = r.u64();
  const std::size_t avail = data.size() - kHeader;
  if (cols != 0 && (rows > avail / 8 / cols || rows * cols * 8 + 4 > avail)) {
    throw TableError(TableErrorCode::kTruncatedPayload,
                     "expected " + std::to_string(rows * cols * 8 + 4) + " bytes, found " + std::to_string(avail));
  }
  if (avail < rows * cols * 8 + 4) throw TableError(TableErrorCode::kTruncatedPayload, "");
  if (avail > rows * cols * 8 + 4) throw TableError(TableErrorCode::kTrailingBytes, "");
  std::vector<double> values(rows * cols);
  for (double& v : values) v = r.f64();
  const std::size_t body = data.size() - 4;
  const auto stored = bytes::Reader(data.subspan(body)).u32();
  if (stored != crc32_of(data.subspan(0, body))) throw TableError(TableErrorCode::kChecksumMismatch, "");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw TableError(TableErrorCode::kNonFinite, "entry " + std::to_string(i));
  }
  EmbeddingTable t;
  t.modality = static_cast<Modality>(tag);
  t.data = Matrix(rows, cols, std::move(values));
  return t;
}

void save_table(const std::filesystem::path& path, const EmbeddingTable& table) {
  bytes::write_file(path, encode_table(table));
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  EmbeddingTable t = decode_table(bytes::read_file(path));
  t.provenance = path.string();
  return t;
}

void save_interactions(const std::filesystem::path& path, const InteractionDataset& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& u : data.users) {
    nlohmann::ordered_json j;
    j["user"] = u.user;
    j["items"] = u.items;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

InteractionDataset load_interactions(const std::filesystem::path& path, std::size_t item_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  InteractionDataset d;
  d.item_count = item_count;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UserSequence u;
      u.user = j.at("user").get<std::uint64_t>();
      for (const auto& it : j.at("items")) {
        const auto id = it.get<std::uint64_t>();
        if (id >= item_count) throw IoError("item id " + std::to_string(id) + " outside catalog");
        u.items.push_back(static_cast<std::uint32_t>(id));
      }
      d.users.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return d;
}

SplitDataset split_leave_last_out(const InteractionDataset& data) {
  SplitDataset s;
  s.item_count = data.item_count;
  s.train_counts.assign(data.item_count, 0);
  for (const auto& u : data.users) {
    const std::size_t n = u.items.size();
    if (n < 3) {
      ++s.excluded;
      continue;
    }
    SplitUser su;
    su.user = u.user;
    su.behavior.assign(u.items.begin(), u.items.end() - 2);
    su.train_target = u.items[n - 2];
    su.test_target = u.items[n - 1];
    for (auto it : su.behavior) ++s.train_counts[it];
    ++s.train_counts[su.train_target];
    s.users.push_back(std::move(su));
  }
  return s;
}

CorpusStats corpus_stats(const InteractionDataset& data) {
  CorpusStats st;
  st.users = data.users.size();
  st.items = data.item_count;
  for (const auto& u : data.users) st.interactions += u.items.size();
  if (st.users > 0 && st.items > 0) {
    st.sparsity = 1.0 - static_cast<double>(st.interactions) / (static_cast<double>(st.users) * static_cast<double>(st.items));
  }
  return st;
}

void SynthConfig::validate() const {
  if (items < 50) throw ConfigError("synth: items must be >= 50");
  if (users < 100) throw ConfigError("synth: users must be >= 100");
  if (latent_dim == 0 || dim_c == 0 || dim_t == 0 || dim_v == 0) throw ConfigError("synth: dimensions must be positive");
  if (min_len < 3 || min_len > max_len) throw ConfigError("synth: need 3 <= min_len <= max_len");
  if (max_len > items) throw ConfigError("synth: sequence length exceeds catalog size");
  if (noise_c < 0.0 || noise_t < 0.0 || noise_v < 0.0) throw ConfigError("synth: noise scales must be >= 0");
  if (!(markov_temperature > 0.0)) throw ConfigError("synth: markov_temperature must be > 0");
}

MarkovWalker::MarkovWalker(const Matrix& latent, double temperature) : latent_(latent), temperature_(temperature) {}

std::uint32_t MarkovWalker::next(std::uint32_t current, Rng& rng) const {
  const std::size_t n = latent_.rows();
  std::vector<double> w(n, 0.0);
  double total = 0.0;
  const auto za = latent_.row(current);
  for (std::size_t b = 0; b < n; ++b) {
    if (b == current) continue;
    w[b] = std::isinf(temperature_) ? 1.0 : std::exp(-std::sqrt(squared_distance(za, latent_.row(b))) / temperature_);
    total += w[b];
  }
  double u = rng.uniform() * total;
  for (std::size_t b = 0; b < n; ++b) {
    if (b == current) continue;
    u -= w[b];
    if (u <= 0.0) return static_cast<std::uint32_t>(b);
  }
  // rounding left a sliver of mass: return the last eligible item
  return static_cast<std::uint32_t>(current + 1 == n ? n - 2 : n - 1);
}

SynthCorpus generate_synth(const SynthConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng latent_rng = root.split("synth/latent");
  SynthCorpus out;
  out.latent = latent_rng.normal_matrix(cfg.items, cfg.latent_dim);

  // E_j = z A_jᵀ + noise, with A_j a dense Gaussian mixing (full rank a.s.)
  auto mixing = [&](const char* label, std::size_t dim) {
    Rng r = root.split(label);
    return r.normal_matrix(dim, cfg.latent_dim, 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim)));
  };
  const Matrix a_c = mixing("synth/mix/c", cfg.dim_c);
  Matrix a_t = mixing("synth/mix/t", cfg.dim_t);
  const Matrix a_v = mixing("synth/mix/v", cfg.dim_v);
  if (cfg.share_ct_mixing) {
    for (std::size_t r = 0; r < std::min(cfg.dim_c, cfg.dim_t); ++r)
      for (std::size_t c = 0; c < cfg.latent_dim; ++c) a_t(r, c) = a_c(r, c);
  }
  auto make = [&](Modality m, const Matrix& a, double noise, const char* label) {
    EmbeddingTable t;
    t.modality = m;
    t.data = Matrix(cfg.items, a.rows());
    Rng r = root.split(label);
    for (std::size_t i = 0; i < cfg.items; ++i) {
      for (std::size_t d = 0; d < a.rows(); ++d) {
        double s = 0.0;
        for (std::size_t k = 0; k < cfg.latent_dim; ++k) s += out.latent(i, k) * a(d, k);
        t.data(i, d) = s + (noise > 0.0 ? r.normal(0.0, noise) : 0.0);
      }
    }
    t.provenance = "synthetic seed=" + std::to_string(cfg.seed);
    return t;
  };
  out.c = make(Modality::kCollaborative, a_c, cfg.noise_c, "synth/noise/c");
  out.t = make(Modality::kText, a_t, cfg.noise_t, "synth/noise/t");
  out.v = make(Modality::kVisual, a_v, cfg.noise_v, "synth/noise/v");

  Rng walk = root.split("synth/walk");
  const MarkovWalker walker(out.latent, cfg.markov_temperature);
  out.interactions.item_count = cfg.items;
  for (std::size_t u = 0; u < cfg.users; ++u) {
    UserSequence seq;
    seq.user = u;
    const std::size_t len = cfg.min_len + walk.index(cfg.max_len - cfg.min_len + 1);
    auto cur = static_cast<std::uint32_t>(walk.index(cfg.items));
    seq.items.push_back(cur);
    while (seq.items.size() < len) {
      cur = walker.next(cur, walk);
      seq.items.push_back(cur);
    }
    out.interactions.users.push_back(std::move(seq));
  }
  return out;
}

}  // namespace mmq::data
