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

#include "ndcc/entropy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "ndcc/error.hpp"

namespace ndcc {
namespace {

// Parameter offsets inside one channel's row.
constexpr int kH1 = 0;   // 3x1
constexpr int kB1 = 3;
constexpr int kA1 = 6;
constexpr int kH2 = 9;   // 3x3, row-major
constexpr int kB2 = 18;
constexpr int kA2 = 21;
constexpr int kH3 = 24;  // 1x3
constexpr int kB3 = 27;
static_assert(kB3 + 1 == FactorizedDensity::kParamsPerChannel);

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double inverse_softplus(double y) { return std::log(std::expm1(y)); }

struct NetState {
  double z1[3], h1[3], z2[3], h2[3];
  double logit;
};

void net_forward(const double* p, double x, NetState& s) {
  for (int i = 0; i < 3; ++i) {
    s.z1[i] = softplus(p[kH1 + i]) * x + p[kB1 + i];
    s.h1[i] = s.z1[i] + std::tanh(p[kA1 + i]) * std::tanh(s.z1[i]);
  }
  for (int i = 0; i < 3; ++i) {
    double z = p[kB2 + i];
    for (int j = 0; j < 3; ++j) z += softplus(p[kH2 + 3 * i + j]) * s.h1[j];
    s.z2[i] = z;
    s.h2[i] = z + std::tanh(p[kA2 + i]) * std::tanh(z);
  }
  double z = p[kB3];
  for (int j = 0; j < 3; ++j) z += softplus(p[kH3 + j]) * s.h2[j];
  s.logit = z;
}

// Accumulates g * d(logit)/d(params) into dp and returns g * d(logit)/dx.
double net_backward(const double* p, double x, const NetState& s, double g,
                    double* dp) {
  double dh2[3], dz2[3], dh1[3] = {0, 0, 0}, dz1[3];
  dp[kB3] += g;
  for (int j = 0; j < 3; ++j) {
    dp[kH3 + j] += g * s.h2[j] * sigmoid(p[kH3 + j]);
    dh2[j] = g * softplus(p[kH3 + j]);
  }
  for (int i = 0; i < 3; ++i) {
    const double ta = std::tanh(p[kA2 + i]), tz = std::tanh(s.z2[i]);
    dz2[i] = dh2[i] * (1.0 + ta * (1.0 - tz * tz));
    dp[kA2 + i] += dh2[i] * tz * (1.0 - ta * ta);
    dp[kB2 + i] += dz2[i];
    for (int j = 0; j < 3; ++j) {
      dp[kH2 + 3 * i + j] += dz2[i] * s.h1[j] * sigmoid(p[kH2 + 3 * i + j]);
      dh1[j] += dz2[i] * softplus(p[kH2 + 3 * i + j]);
    }
  }
  double dx = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double ta = std::tanh(p[kA1 + i]), tz = std::tanh(s.z1[i]);
    dz1[i] = dh1[i] * (1.0 + ta * (1.0 - tz * tz));
    dp[kA1 + i] += dh1[i] * tz * (1.0 - ta * ta);
    dp[kB1 + i] += dz1[i];
    dp[kH1 + i] += dz1[i] * x * sigmoid(p[kH1 + i]);
    dx += dz1[i] * softplus(p[kH1 + i]);
  }
  return dx;
}

// |sigmoid(s*u) - sigmoid(s*l)| with s chosen to evaluate in the far tail
// where the difference is representable.
double stable_mass(double upper_logit, double lower_logit) {
  const double s = (upper_logit + lower_logit) > 0.0 ? -1.0 : 1.0;
  return std::abs(sigmoid(s * upper_logit) - sigmoid(s * lower_logit));
}

}  // namespace

double round_half_even(double v) { return std::nearbyint(v); }

Tensor quantize(const Tensor& v, QuantMode mode, NoiseSource* noise) {
  Tensor out(v.shape());
  if (mode == QuantMode::kEval) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = round_half_even(v[i]);
  } else {
    check_arg(noise != nullptr, "quantize: training mode needs a noise source");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + noise->uniform_centered();
  }
  return out;
}

ad::Var quantize(const ad::Var& v, QuantMode mode, NoiseSource* noise) {
  if (mode == QuantMode::kEval) return ad::constant(quantize(v.value(), mode, noise));
  check_arg(noise != nullptr, "quantize: training mode needs a noise source");
  Tensor u(v.shape());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = noise->uniform_centered();
  return ad::add(v, ad::constant(std::move(u)));
}

FactorizedDensity::FactorizedDensity(int channels, std::mt19937_64& rng) {
  check_arg(channels > 0, "density needs at least one channel");
  // filters (1, 3, 3, 1): each weight starts at 1 / (scale * fan_out).
  const double scale = std::cbrt(10.0);
  std::uniform_real_distribution<double> bias(-0.5, 0.5);
  Tensor p({channels, kParamsPerChannel});
  for (int c = 0; c < channels; ++c) {
    double* row = p.data() + static_cast<std::size_t>(c) * kParamsPerChannel;
    for (int i = 0; i < 3; ++i) row[kH1 + i] = inverse_softplus(1.0 / scale / 3.0);
    for (int i = 0; i < 9; ++i) row[kH2 + i] = inverse_softplus(1.0 / scale / 3.0);
    for (int i = 0; i < 3; ++i) row[kH3 + i] = inverse_softplus(1.0 / scale);
    for (int i = 0; i < 3; ++i) row[kB1 + i] = bias(rng);
    for (int i = 0; i < 3; ++i) row[kB2 + i] = bias(rng);
    row[kB3] = bias(rng);
  }
  params_ = ad::parameter(std::move(p));
}

FactorizedDensity::FactorizedDensity(ad::Var params) : params_(std::move(params)) {
  check_shape(params_.value().rank() == 2 && params_.value().dim(1) == kParamsPerChannel,
              "density parameters must be (C x " + std::to_string(kParamsPerChannel) +
                  "), got " + shape_string(params_.shape()));
}

double FactorizedDensity::logit(int channel, double v) const {
  NetState s;
  net_forward(params_.value().data() + static_cast<std::size_t>(channel) * kParamsPerChannel,
              v, s);
  return s.logit;
}

double FactorizedDensity::cdf(int channel, double v) const {
  return sigmoid(logit(channel, v));
}

double FactorizedDensity::bin_mass(int channel, double v) const {
  return stable_mass(logit(channel, v + 0.5), logit(channel, v - 0.5));
}

ad::Var FactorizedDensity::likelihood(const ad::Var& v) const {
  check_shape(v.value().rank() == 3 && v.value().dim(0) == channels(),
              "likelihood: tensor " + shape_string(v.shape()) + " does not match " +
                  std::to_string(channels()) + "-channel density");
  const int c_count = channels();
  const std::size_t plane = v.value().size() / static_cast<std::size_t>(c_count);
  Tensor out(v.shape());
  for (int c = 0; c < c_count; ++c) {
    const double* p = params_.value().data() + static_cast<std::size_t>(c) * kParamsPerChannel;
    for (std::size_t i = 0; i < plane; ++i) {
      const double x = v.value()[c * plane + i];
      NetState up, lo;
      net_forward(p, x + 0.5, up);
      net_forward(p, x - 0.5, lo);
      out[c * plane + i] = std::max(stable_mass(up.logit, lo.logit), kLikelihoodFloor);
    }
  }
  ad::Var params = params_;
  return ad::make_op(std::move(out), {v, params}, [v, params, plane](const Tensor& y,
                                                                     const Tensor& g) {
    const int c_count = params.value().dim(0);
    Tensor dparams(params.shape());
    Tensor* dv = v.requires_grad() ? &v.grad_buffer() : nullptr;
    for (int c = 0; c < c_count; ++c) {
      const double* p = params.value().data() + static_cast<std::size_t>(c) * FactorizedDensity::kParamsPerChannel;
      double* dp = dparams.data() + static_cast<std::size_t>(c) * FactorizedDensity::kParamsPerChannel;
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = c * plane + i;
        if (y[idx] <= kLikelihoodFloor || g[idx] == 0.0) continue;
        const double x = v.value()[idx];
        NetState up, lo;
        net_forward(p, x + 0.5, up);
        net_forward(p, x - 0.5, lo);
        const double s = (up.logit + lo.logit) > 0.0 ? -1.0 : 1.0;
        const double su = sigmoid(s * up.logit), sl = sigmoid(s * lo.logit);
        const double sign = (su - sl) >= 0.0 ? 1.0 : -1.0;
        const double d_up = g[idx] * sign * s * su * (1.0 - su);
        const double d_lo = -g[idx] * sign * s * sl * (1.0 - sl);
        const double dx = net_backward(p, x + 0.5, up, d_up, dp) +
                          net_backward(p, x - 0.5, lo, d_lo, dp);
        if (dv) (*dv)[idx] += dx;
      }
    }
    if (params.requires_grad()) params.accumulate(dparams);
  });
}

Tensor bin_likelihood(const Tensor& v, const FactorizedDensity& d) {
  ad::NoGradGuard guard;
  return d.likelihood(ad::constant(v)).value();
}

double rate_bits(const Tensor& p) {
  double bits = 0.0;
  for (double q : p.values()) {
    check_arg(q > 0.0, "rate_bits: nonpositive probability");
    bits -= std::log2(q);
  }
  return bits;
}

ad::Var rate_bits(const ad::Var& p) {
  for (double q : p.value().values())
    check_arg(q > 0.0, "rate_bits: nonpositive probability");
  return ad::scale(ad::sum(ad::log(p)), -1.0 / std::log(2.0));
}

double continuous_log_density(const Tensor& v, const FactorizedDensity& d) {
  return rate_bits(bin_likelihood(v, d));
}

ad::Var continuous_log_density(const ad::Var& v, const FactorizedDensity& d) {
  return rate_bits(d.likelihood(v));
}

ChannelCdf quantize_pmf(std::span<const double> pmf, int v_min, int precision) {
  check_arg(precision >= 1 && precision <= 16, "cdf precision must be in [1, 16]");
  const auto n = static_cast<std::int64_t>(pmf.size());
  const std::int64_t total = std::int64_t{1} << precision;
  check_arg(n >= 1 && n <= total, "pmf has more bins than 2^precision");
  double mass = 0.0;
  for (double p : pmf) mass += std::max(p, 0.0);
  std::vector<std::int64_t> freq(pmf.size());
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    const double share = mass > 0.0 ? std::max(pmf[i], 0.0) / mass : 1.0 / n;
    freq[i] = std::max<std::int64_t>(1, std::llround(share * static_cast<double>(total)));
    sum += freq[i];
  }
  // Settle the rounding residue on the largest bins, keeping every bin >= 1.
  std::vector<std::size_t> order(pmf.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return freq[a] > freq[b]; });
  if (sum < total) {
    freq[order[0]] += total - sum;
  } else {
    while (sum > total) {
      for (std::size_t i : order) {
        if (sum == total) break;
        const std::int64_t take = std::min(freq[i] - 1, sum - total);
        freq[i] -= take;
        sum -= take;
      }
    }
  }
  ChannelCdf out;
  out.v_min = v_min;
  out.v_max = v_min + static_cast<int>(n) - 1;
  out.cdf.resize(pmf.size() + 1);
  out.cdf[0] = 0;
  for (std::size_t i = 0; i < pmf.size(); ++i)
    out.cdf[i + 1] = out.cdf[i] + static_cast<std::uint32_t>(freq[i]);
  return out;
}

CdfTable build_cdf_table(const FactorizedDensity& d, std::span<const int> v_min,
                         std::span<const int> v_max, int precision) {
  check_arg(precision >= 12 && precision <= 16, "cdf precision must be in [12, 16]");
  check_arg(v_min.size() == static_cast<std::size_t>(d.channels()) &&
                v_max.size() == v_min.size(),
            "symbol ranges must be given per channel");
  CdfTable table;
  table.precision = precision;
  for (int c = 0; c < d.channels(); ++c) {
    check_arg(v_min[c] < v_max[c], "cdf table needs v_min < v_max");
    std::vector<double> pmf;
    pmf.reserve(static_cast<std::size_t>(v_max[c] - v_min[c] + 1));
    pmf.push_back(d.cdf(c, v_min[c] + 0.5));
    for (int v = v_min[c] + 1; v < v_max[c]; ++v) pmf.push_back(d.bin_mass(c, v));
    pmf.push_back(sigmoid(-d.logit(c, v_max[c] - 0.5)));
    for (double& p : pmf) {
      check_arg(std::isfinite(p), "density produced a non-finite probability");
      p = std::max(p, kLikelihoodFloor);
    }
    table.channels.push_back(quantize_pmf(pmf, v_min[c], precision));
  }
  return table;
}

CdfTable build_cdf_table(const FactorizedDensity& d, int v_min, int v_max, int precision) {
  std::vector<int> lo(static_cast<std::size_t>(d.channels()), v_min);
  std::vector<int> hi(static_cast<std::size_t>(d.channels()), v_max);
  return build_cdf_table(d, lo, hi, precision);
}

// --- range coder ---------------------------------------------------------

namespace {
constexpr std::uint32_t kTop = 1u << 24;
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq, int precision) {
  const std::uint32_t r = range_ >> precision;
  low_ += static_cast<std::uint64_t>(r) * cum;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= bytes_.size())
    fail(ErrorKind::kCorruptStream, "range decoder: payload truncated");
  return bytes_[pos_++];
}

std::uint32_t RangeDecoder::peek(int precision) {
  const std::uint32_t r = range_ >> precision;
  const std::uint32_t v = code_ / r;
  const std::uint32_t limit = (1u << precision) - 1;
  return v > limit ? limit : v;
}

void RangeDecoder::consume(std::uint32_t cum, std::uint32_t freq, int precision) {
  const std::uint32_t r = range_ >> precision;
  code_ -= r * cum;
  range_ = r * freq;
  if (code_ >= range_) fail(ErrorKind::kCorruptStream, "range decoder: invalid code");
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

namespace {

// Escape magnitudes use Elias-gamma of (m + 1) over equiprobable bits.
void encode_escape(RangeEncoder& enc, std::uint32_t magnitude) {
  const std::uint32_t value = magnitude + 1;
  const int bits = std::bit_width(value);
  for (int i = 0; i < bits - 1; ++i) enc.encode(0, 1, 1);
  for (int i = bits - 1; i >= 0; --i) enc.encode((value >> i) & 1u, 1, 1);
}

std::uint32_t decode_bit(RangeDecoder& dec) {
  const std::uint32_t bit = dec.peek(1);
  dec.consume(bit, 1, 1);
  return bit;
}

std::uint32_t decode_escape(RangeDecoder& dec) {
  int zeros = 0;
  while (decode_bit(dec) == 0) {
    if (++zeros > 31) fail(ErrorKind::kCorruptStream, "range decoder: bad escape");
  }
  std::uint32_t value = 1;
  for (int i = 0; i < zeros; ++i) value = (value << 1) | decode_bit(dec);
  return value - 1;
}

std::size_t symbols_per_channel(std::size_t count, const CdfTable& table) {
  check_arg(!table.channels.empty(), "cdf table has no channels");
  check_arg(count % table.channels.size() == 0,
            "symbol count is not a multiple of the table's channel count");
  return count / table.channels.size();
}

}  // namespace

std::vector<std::uint8_t> rc_encode(std::span<const std::int32_t> symbols,
                                    const CdfTable& table) {
  RangeEncoder enc;
  if (!symbols.empty()) {
    const std::size_t per = symbols_per_channel(symbols.size(), table);
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      const ChannelCdf& ch = table.channels[i / per];
      const std::int32_t s = symbols[i];
      const int bin = std::clamp<std::int32_t>(s, ch.v_min, ch.v_max);
      const std::uint32_t cum = ch.cdf[bin - ch.v_min];
      enc.encode(cum, ch.cdf[bin - ch.v_min + 1] - cum, table.precision);
      if (bin == ch.v_min) encode_escape(enc, static_cast<std::uint32_t>(ch.v_min - s));
      else if (bin == ch.v_max) encode_escape(enc, static_cast<std::uint32_t>(s - ch.v_max));
    }
  }
  return enc.finish();
}

std::vector<std::int32_t> rc_decode(std::span<const std::uint8_t> bytes,
                                    const CdfTable& table, std::size_t count) {
  RangeDecoder dec(bytes);
  std::vector<std::int32_t> out;
  out.reserve(count);
  if (count > 0) {
    const std::size_t per = symbols_per_channel(count, table);
    for (std::size_t i = 0; i < count; ++i) {
      const ChannelCdf& ch = table.channels[i / per];
      const std::uint32_t target = dec.peek(table.precision);
      const auto it = std::upper_bound(ch.cdf.begin(), ch.cdf.end(), target);
      const auto idx = static_cast<int>(it - ch.cdf.begin()) - 1;
      if (idx < 0 || idx >= ch.num_symbols())
        fail(ErrorKind::kCorruptStream, "range decoder: symbol out of table");
      dec.consume(ch.cdf[idx], ch.cdf[idx + 1] - ch.cdf[idx], table.precision);
      std::int32_t s = ch.v_min + idx;
      if (s == ch.v_min) s -= static_cast<std::int32_t>(decode_escape(dec));
      else if (s == ch.v_max) s += static_cast<std::int32_t>(decode_escape(dec));
      out.push_back(s);
    }
  }
  if (dec.bytes_read() != bytes.size())
    fail(ErrorKind::kCorruptStream, "range decoder: trailing bytes in payload");
  return out;
}

double table_codelength_bits(std::span<const std::int32_t> symbols, const CdfTable& table) {
  if (symbols.empty()) return 0.0;
  const std::size_t per = symbols_per_channel(symbols.size(), table);
  const double total = std::ldexp(1.0, table.precision);
  double bits = 0.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const ChannelCdf& ch = table.channels[i / per];
    const std::int32_t s = symbols[i];
    const int bin = std::clamp<std::int32_t>(s, ch.v_min, ch.v_max);
    bits -= std::log2(ch.freq(bin) / total);
    if (bin == ch.v_min || bin == ch.v_max) {
      const auto m = static_cast<std::uint32_t>(std::abs(s - bin));
      bits += 2 * std::bit_width(m + 1) - 1;
    }
  }
  return bits;
}

// --- bitstream container -------------------------------------------------

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::span<const std::uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { need(1); return b_[pos_++]; }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail(ErrorKind::kCorruptStream, "bitstream truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

constexpr std::array<std::uint8_t, 4> kMagic = {'N', 'D', 'C', 'C'};

}  // namespace

std::vector<std::uint8_t> serialize_bitstream(const Bitstream& b) {
  const BitstreamHeader& h = b.header;
  check_arg(h.symbol_min.size() == h.latent_channels &&
                h.symbol_max.size() == h.latent_channels,
            "bitstream header: symbol ranges must match latent channels");
  Writer w;
  w.bytes(kMagic);
  w.u8(h.version);
  w.bytes(h.model_hash);
  w.u16(h.lambda_id);
  w.u16(h.image_height);
  w.u16(h.image_width);
  w.u16(h.latent_channels);
  w.u16(h.latent_height);
  w.u16(h.latent_width);
  for (std::size_t c = 0; c < h.symbol_min.size(); ++c) {
    w.u16(static_cast<std::uint16_t>(h.symbol_min[c]));
    w.u16(static_cast<std::uint16_t>(h.symbol_max[c]));
  }
  w.u32(static_cast<std::uint32_t>(b.payload.size()));
  w.bytes(b.payload);
  return std::move(w.out);
}

Bitstream parse_bitstream(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin()))
    fail(ErrorKind::kCorruptStream, "not an NDCC bitstream (bad magic)");
  Bitstream b;
  BitstreamHeader& h = b.header;
  h.version = r.u8();
  if (h.version != kBitstreamVersion)
    fail(ErrorKind::kCorruptStream,
         "unsupported bitstream version " + std::to_string(h.version));
  const auto hash = r.take(16);
  std::copy(hash.begin(), hash.end(), h.model_hash.begin());
  h.lambda_id = r.u16();
  h.image_height = r.u16();
  h.image_width = r.u16();
  h.latent_channels = r.u16();
  h.latent_height = r.u16();
  h.latent_width = r.u16();
  for (int c = 0; c < h.latent_channels; ++c) {
    h.symbol_min.push_back(static_cast<std::int16_t>(r.u16()));
    h.symbol_max.push_back(static_cast<std::int16_t>(r.u16()));
  }
  const std::uint32_t length = r.u32();
  const auto payload = r.take(length);
  b.payload.assign(payload.begin(), payload.end());
  if (r.remaining() != 0) fail(ErrorKind::kCorruptStream, "bitstream has trailing bytes");
  return b;
}

}  // namespace ndcc
