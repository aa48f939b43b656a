// Copyright 2026 The NDCC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ndcc/autodiff.hpp"
#include "ndcc/tensor.hpp"

namespace ndcc {

enum class QuantMode { kTrain, kEval };

// Seeded source of the additive U(-0.5, 0.5) training noise.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : engine_(seed) {}
  double uniform_centered() { return dist_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> dist_{-0.5, 0.5};
};

// Round half to even; encoder and decoder rely on this tie rule.
double round_half_even(double v);

// Train: v + u with u ~ U(-0.5, 0.5) (requires `noise`). Eval: rounding.
Tensor quantize(const Tensor& v, QuantMode mode, NoiseSource* noise);
// Gradient passes through the additive noise; eval rounding has no gradient.
ad::Var quantize(const ad::Var& v, QuantMode mode, NoiseSource* noise);

inline constexpr double kLikelihoodFloor = 1.0 / 32768.0;

// Discretized likelihood of a unit-width bin centered at v under any CDF.
template <typename Cdf>
double bin_probability(const Cdf& cdf, double v, double floor = kLikelihoodFloor) {
  const double p = cdf(v + 0.5) - cdf(v - 0.5);
  return p < floor ? floor : p;
}

// Per-channel learnable monotone CDF c_k(v) = sigmoid(net_k(v)), where net_k
// is three monotone stages 1->3->3->1: affine maps with softplus-positive
// weights, the first two followed by h + tanh(a) * tanh(h).
class FactorizedDensity {
 public:
  static constexpr int kParamsPerChannel = 28;

  FactorizedDensity() = default;
  // Standard initialization (init scale 10, uniform biases in [-0.5, 0.5]).
  FactorizedDensity(int channels, std::mt19937_64& rng);
  // Wraps an existing (channels x kParamsPerChannel) raw parameter tensor.
  explicit FactorizedDensity(ad::Var params);

  int channels() const { return params_.value().dim(0); }
  const ad::Var& params() const { return params_; }
  ad::Var& params() { return params_; }

  double logit(int channel, double v) const;
  double cdf(int channel, double v) const;
  // c(v + 1/2) - c(v - 1/2), computed without the floor.
  double bin_mass(int channel, double v) const;

  // Floored bin probabilities of a (C, H, W) tensor, differentiable in both
  // v and the density parameters.
  ad::Var likelihood(const ad::Var& v) const;

 private:
  ad::Var params_;
};

Tensor bin_likelihood(const Tensor& v, const FactorizedDensity& d);
double rate_bits(const Tensor& p);
ad::Var rate_bits(const ad::Var& p);
// Bits of a real-valued (unquantized) tensor under the bin construction.
double continuous_log_density(const Tensor& v, const FactorizedDensity& d);
ad::Var continuous_log_density(const ad::Var& v, const FactorizedDensity& d);

// Integer CDF for symbols v_min..v_max: cdf[i] is the cumulative frequency
// below symbol v_min + i, so cdf.front() == 0 and cdf.back() == 2^precision.
// The extreme bins also absorb the tails and act as escape symbols.
struct ChannelCdf {
  int v_min = 0;
  int v_max = 0;
  std::vector<std::uint32_t> cdf;

  int num_symbols() const { return v_max - v_min + 1; }
  std::uint32_t freq(int symbol) const {
    return cdf[symbol - v_min + 1] - cdf[symbol - v_min];
  }
};

struct CdfTable {
  int precision = 16;
  std::vector<ChannelCdf> channels;
};

// Quantizes a pmf over consecutive symbols to frequencies summing to
// 2^precision with every bin at least 1.
ChannelCdf quantize_pmf(std::span<const double> pmf, int v_min, int precision);

CdfTable build_cdf_table(const FactorizedDensity& d, std::span<const int> v_min,
                         std::span<const int> v_max, int precision);
CdfTable build_cdf_table(const FactorizedDensity& d, int v_min, int v_max,
                         int precision);

// Symbols are laid out channel-major: with C table channels and n symbols,
// symbol i uses channel i / (n / C).
std::vector<std::uint8_t> rc_encode(std::span<const std::int32_t> symbols,
                                    const CdfTable& table);
std::vector<std::int32_t> rc_decode(std::span<const std::uint8_t> bytes,
                                    const CdfTable& table, std::size_t count);
// Ideal codelength in bits of `symbols` under the table (escapes included).
double table_codelength_bits(std::span<const std::int32_t> symbols,
                             const CdfTable& table);

// Carry-propagating byte-oriented range coder over 2^precision frequencies.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq, int precision);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);
  // Returns the target frequency; the caller maps it to a symbol and calls
  // consume() with that symbol's interval.
  std::uint32_t peek(int precision);
  void consume(std::uint32_t cum, std::uint32_t freq, int precision);
  std::size_t bytes_read() const { return pos_; }

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

inline constexpr std::uint8_t kBitstreamVersion = 1;

struct BitstreamHeader {
  std::uint8_t version = kBitstreamVersion;
  std::array<std::uint8_t, 16> model_hash{};
  std::uint16_t lambda_id = 0;
  std::uint16_t image_height = 0;
  std::uint16_t image_width = 0;
  std::uint16_t latent_channels = 0;
  std::uint16_t latent_height = 0;
  std::uint16_t latent_width = 0;
  // Per-channel symbol range [symbol_min, symbol_max].
  std::vector<std::int16_t> symbol_min;
  std::vector<std::int16_t> symbol_max;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> payload;
};

// Little-endian layout: "NDCC", u8 version, 16-byte model hash, u16 lambda id,
// u16 x2 image dims, u16 x3 latent dims, per-channel i16 (min, max),
// u32 payload length, payload.
std::vector<std::uint8_t> serialize_bitstream(const Bitstream& b);
Bitstream parse_bitstream(std::span<const std::uint8_t> bytes);

}  // namespace ndcc
