// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "mmq/diffkit/matrix.hpp"

namespace mmq {

/// Seeded generator. Child streams are keyed by (seed, label) so that
/// independent consumers never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent stream derived from this generator's seed and a purpose label.
  Rng split(std::string_view label) const { return Rng(derive_seed(seed_, label)); }
  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  static std::uint64_t mix(std::uint64_t x);

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace mmq
