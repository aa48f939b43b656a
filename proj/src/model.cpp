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

#include "ndcc/model.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "ndcc/error.hpp"

namespace ndcc {

namespace fs = std::filesystem;

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.name = "ndcc";
  c.preset = "full";
  c.channels = {128, 128, 128, 192};
  c.common_channels = 64;
  c.cam.embed_dim = 64;
  c.cam.attn_dim = 64;
  c.cam.heads = 4;
  c.preprocess = {370, 740, 128, 256};
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& preset) {
  if (preset == "desk") return desk();
  if (preset == "full") return full();
  fail(ErrorKind::kInvalidArgument, "unknown preset '" + preset + "' (expected desk or full)");
}

void ModelConfig::validate() const {
  check_arg(channels.size() >= 2, "model needs at least two transform layers");
  for (int c : channels) check_arg(c > 0, "channel counts must be positive");
  check_arg(common_channels > 0, "common_channels must be positive");
  check_arg(kernel > 0 && kernel % 2 == 1, "kernel must be odd and positive");
  check_arg(cam_count >= 0 && cam_count <= synthesis_layers() - 1,
            "cam_count must be in [0, " + std::to_string(synthesis_layers() - 1) + "]");
  check_arg(lambda > 0.0 && alpha >= 0.0 && beta >= 0.0,
            "lambda must be positive, alpha and beta non-negative");
  check_arg(cdf_precision >= 12 && cdf_precision <= 16, "cdf_precision must be in [12, 16]");
  for (int i = 0; i < cam_count; ++i) cam_config(i).validate();
}

std::uint16_t ModelConfig::lambda_id() const {
  for (std::size_t i = 0; i < kLambdaGrid.size(); ++i)
    if (kLambdaGrid[i] == lambda) return static_cast<std::uint16_t>(i);
  return kLambdaOffGrid;
}

TransformSpec ModelConfig::primary_analysis_spec() const {
  return make_analysis_spec(channels, 3, kernel);
}

TransformSpec ModelConfig::side_analysis_spec() const {
  return make_analysis_spec(channels, 3, kernel);
}

TransformSpec ModelConfig::common_spec() const {
  std::vector<int> c = channels;
  c.back() = common_channels;
  return make_analysis_spec(c, 3, kernel);
}

namespace {

// Synthesis layer i outputs the mirror of analysis layer (n - 2 - i), and
// 3 channels at the end.
std::vector<int> synthesis_outputs(const std::vector<int>& channels) {
  std::vector<int> out;
  for (int i = static_cast<int>(channels.size()) - 2; i >= 0; --i) out.push_back(channels[i]);
  out.push_back(3);
  return out;
}

}  // namespace

TransformSpec ModelConfig::primary_synthesis_spec() const {
  const auto out = synthesis_outputs(channels);
  std::vector<int> in{latent_channels() + common_channels};
  for (std::size_t i = 0; i + 1 < out.size(); ++i)
    in.push_back(static_cast<int>(i) < cam_count ? 2 * out[i] : out[i]);
  return make_synthesis_spec(in, out, kernel);
}

TransformSpec ModelConfig::side_synthesis_spec() const {
  const auto out = synthesis_outputs(channels);
  std::vector<int> in{latent_channels() + common_channels};
  for (std::size_t i = 0; i + 1 < out.size(); ++i) in.push_back(out[i]);
  return make_synthesis_spec(in, out, kernel);
}

CamConfig ModelConfig::cam_config(int index) const {
  const int feature_channels = synthesis_outputs(channels).at(static_cast<std::size_t>(index));
  check_arg(cam.patch_channel_divisor > 0 && feature_channels % cam.patch_channel_divisor == 0,
            "cam patch divisor must divide " + std::to_string(feature_channels) + " channels");
  CamConfig c;
  c.patch = {feature_channels / cam.patch_channel_divisor, cam.patch_h, cam.patch_w};
  c.embed_dim = cam.embed_dim;
  c.attn_dim = cam.attn_dim;
  c.heads = cam.heads;
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"name", name},
      {"preset", preset},
      {"channels", channels},
      {"common_channels", common_channels},
      {"kernel", kernel},
      {"cam_count", cam_count},
      {"cam",
       {{"embed_dim", cam.embed_dim},
        {"attn_dim", cam.attn_dim},
        {"heads", cam.heads},
        {"patch_channel_divisor", cam.patch_channel_divisor},
        {"patch_h", cam.patch_h},
        {"patch_w", cam.patch_w}}},
      {"lambda", lambda},
      {"alpha", alpha},
      {"beta", beta},
      {"cdf_precision", cdf_precision},
      {"init_seed", init_seed},
      {"preprocess", preprocess.to_json()},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c = from_preset(j.value("preset", std::string("desk")));
  c.name = j.value("name", c.name);
  c.channels = j.value("channels", c.channels);
  c.common_channels = j.value("common_channels", c.common_channels);
  c.kernel = j.value("kernel", c.kernel);
  c.cam_count = j.value("cam_count", c.cam_count);
  if (j.contains("cam")) {
    const auto& k = j.at("cam");
    c.cam.embed_dim = k.value("embed_dim", c.cam.embed_dim);
    c.cam.attn_dim = k.value("attn_dim", c.cam.attn_dim);
    c.cam.heads = k.value("heads", c.cam.heads);
    c.cam.patch_channel_divisor = k.value("patch_channel_divisor", c.cam.patch_channel_divisor);
    c.cam.patch_h = k.value("patch_h", c.cam.patch_h);
    c.cam.patch_w = k.value("patch_w", c.cam.patch_w);
  }
  c.lambda = j.value("lambda", c.lambda);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.cdf_precision = j.value("cdf_precision", c.cdf_precision);
  c.init_seed = j.value("init_seed", c.init_seed);
  if (j.contains("preprocess")) c.preprocess = PreprocessConfig::from_json(j.at("preprocess"));
  c.validate();
  return c;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  g_ax_spec = config_.primary_analysis_spec();
  g_ay_spec = config_.side_analysis_spec();
  f_spec = config_.common_spec();
  g_sx_spec = config_.primary_synthesis_spec();
  g_sy_spec = config_.side_synthesis_spec();
  g_ax = init_transform(g_ax_spec, rng);
  f = init_transform(f_spec, rng);
  g_ay = init_transform(g_ay_spec, rng);
  g_sx = init_transform(g_sx_spec, rng);
  g_sy = init_transform(g_sy_spec, rng);
  for (int i = 0; i < config_.cam_count; ++i)
    cams.push_back(CamParams::init(config_.cam_config(i), rng));
  density_vx = FactorizedDensity(config_.latent_channels(), rng);
  density_vy = FactorizedDensity(config_.latent_channels(), rng);
  density_w = FactorizedDensity(config_.common_channels, rng);

  g_ax.collect("g_ax", params_);
  f.collect("f", params_);
  g_ay.collect("g_ay", params_);
  g_sx.collect("g_sx", params_);
  g_sy.collect("g_sy", params_);
  for (std::size_t i = 0; i < cams.size(); ++i) cams[i].collect("cam." + std::to_string(i), params_);
  params_.emplace_back("density.v_x", density_vx.params());
  params_.emplace_back("density.v_y", density_vy.params());
  params_.emplace_back("density.w", density_w.params());
}

const ad::Var& Model::parameter(const std::string& name) const {
  for (const auto& [n, v] : params_)
    if (n == name) return v;
  fail(ErrorKind::kInvalidArgument, "model has no parameter '" + name + "'");
}

ModelHash Model::hash() const {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                             &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::kIo, "SHA-256 unavailable");
  const auto update = [&](const void* p, std::size_t n) {
    EVP_DigestUpdate(ctx.get(), p, n);
  };
  const std::string cfg = config_.to_json().dump();
  update(cfg.data(), cfg.size());
  for (const auto& [name, var] : params_) {
    update(name.data(), name.size());
    const Tensor& t = var.value();
    for (int d : t.shape()) {
      const auto d32 = static_cast<std::int32_t>(d);
      update(&d32, sizeof(d32));
    }
    update(t.data(), t.size() * sizeof(double));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  ModelHash out{};
  std::copy_n(digest.begin(), out.size(), out.begin());
  return out;
}

std::string hash_hex(const ModelHash& hash) {
  std::ostringstream os;
  for (std::uint8_t b : hash) os << std::hex << std::setw(2) << std::setfill('0') << int{b};
  return os.str();
}

LatentBundle decode_latent(const Model& model, const ad::Var& v_x_hat, const ad::Var& y,
                           bool clamp_output) {
  const ModelConfig& cfg = model.config();
  LatentBundle b;
  b.v_x_hat = v_x_hat;
  b.w = common_extractor(y, model.f_spec, model.f);
  b.v_y = analysis_transform(y, model.g_ay_spec, model.g_ay);
  check_shape(b.w.value().dim(1) == v_x_hat.value().dim(1) &&
                  b.w.value().dim(2) == v_x_hat.value().dim(2),
              "decoder: side information " + shape_string(y.shape()) +
                  " does not match latent " + shape_string(v_x_hat.shape()));
  ad::Var hx = ad::concat_channels({v_x_hat, b.w});
  ad::Var hy = ad::concat_channels({b.v_y, b.w});
  const int layers = cfg.synthesis_layers();
  for (int i = 0; i < layers; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const ad::Var vx = apply_layer(hx, model.g_sx_spec.layers[idx], model.g_sx.layers[idx], true);
    const ad::Var vy = apply_layer(hy, model.g_sy_spec.layers[idx], model.g_sy.layers[idx], true);
    b.vx_features.push_back(vx);
    b.vy_features.push_back(vy);
    if (i < cfg.cam_count) {
      CamOutput cam = cam_forward(vx, vy, model.cams[idx]);
      b.cam_features.push_back(cam.output);
      b.cam_weights.push_back(std::move(cam.weights));
      hx = ad::concat_channels({vx, cam.output});
    } else {
      hx = vx;
    }
    hy = vy;
  }
  b.x_hat = b.vx_features.back();
  b.y_hat = b.vy_features.back();
  if (clamp_output) {
    b.x_hat = ad::clamp(b.x_hat, 0.0, 1.0);
    b.y_hat = ad::clamp(b.y_hat, 0.0, 1.0);
  }
  return b;
}

LatentBundle forward(const Model& model, const ImagePair& pair, QuantMode mode,
                     NoiseSource* noise) {
  check_shape(pair.x.shape() == pair.y.shape(), "forward: x and y shapes differ");
  const ad::Var x = ad::constant(pair.x);
  const ad::Var y = ad::constant(pair.y);
  const ad::Var v_x = analysis_transform(x, model.g_ax_spec, model.g_ax);
  LatentBundle b = decode_latent(model, quantize(v_x, mode, noise), y, mode == QuantMode::kEval);
  b.v_x = v_x;
  return b;
}

namespace {

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

CdfTable table_for(const Model& model, const BitstreamHeader& h) {
  std::vector<int> lo(h.symbol_min.begin(), h.symbol_min.end());
  std::vector<int> hi(h.symbol_max.begin(), h.symbol_max.end());
  return build_cdf_table(model.density_vx, lo, hi, model.config().cdf_precision);
}

std::uint16_t to_u16(int v, const char* what) {
  check_arg(v >= 0 && v <= 0xFFFF, std::string(what) + " does not fit the bitstream header");
  return static_cast<std::uint16_t>(v);
}

}  // namespace

double estimated_bits(const Tensor& v_x_hat, const Model& model) {
  return rate_bits(bin_likelihood(v_x_hat, model.density_vx));
}

Bitstream compress(const Tensor& x, const Model& model) {
  check_shape(x.rank() == 3 && x.dim(0) == 3, "compress expects a (3, H, W) image");
  const Tensor latent = quantize(analysis_transform(x, model.g_ax_spec, model.g_ax),
                                 QuantMode::kEval, nullptr);
  const int channels = latent.dim(0);
  const std::size_t plane = latent.size() / static_cast<std::size_t>(channels);
  Bitstream b;
  BitstreamHeader& h = b.header;
  h.model_hash = model.hash();
  h.lambda_id = model.config().lambda_id();
  h.image_height = to_u16(x.dim(1), "image height");
  h.image_width = to_u16(x.dim(2), "image width");
  h.latent_channels = to_u16(channels, "latent channels");
  h.latent_height = to_u16(latent.dim(1), "latent height");
  h.latent_width = to_u16(latent.dim(2), "latent width");
  std::vector<std::int32_t> symbols(latent.size());
  for (int c = 0; c < channels; ++c) {
    double lo = latent[c * plane], hi = lo;
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = latent[c * plane + i];
      if (!std::isfinite(v) || std::abs(v) > 30000.0)
        fail(ErrorKind::kInvalidArgument, "latent value out of codable range");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      symbols[c * plane + i] = static_cast<std::int32_t>(v);
    }
    h.symbol_min.push_back(static_cast<std::int16_t>(lo - 1));
    h.symbol_max.push_back(static_cast<std::int16_t>(hi + 1));
  }
  b.payload = rc_encode(symbols, table_for(model, h));
  const std::uint32_t crc = crc_of(b.payload);
  for (int i = 0; i < 4; ++i) b.payload.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  return b;
}

Tensor decompress(const Bitstream& stream, const Tensor& y, const Model& model) {
  const BitstreamHeader& h = stream.header;
  if (h.model_hash != model.hash())
    fail(ErrorKind::kHashMismatch, "bitstream was produced by model " + hash_hex(h.model_hash) +
                                       ", loaded model is " + hash_hex(model.hash()));
  check_shape(y.rank() == 3 && y.dim(0) == 3 && y.dim(1) == h.image_height &&
                  y.dim(2) == h.image_width,
              "side information " + shape_string(y.shape()) + " does not match image " +
                  std::to_string(h.image_height) + "x" + std::to_string(h.image_width));
  check_shape(h.latent_channels == model.config().latent_channels(),
              "bitstream latent channels do not match the model");
  if (stream.payload.size() < 4) fail(ErrorKind::kCorruptStream, "payload truncated");
  const std::span<const std::uint8_t> coded(stream.payload.data(), stream.payload.size() - 4);
  std::uint32_t crc = 0;
  for (int i = 0; i < 4; ++i)
    crc |= static_cast<std::uint32_t>(stream.payload[coded.size() + i]) << (8 * i);
  if (crc != crc_of(coded)) fail(ErrorKind::kCorruptStream, "payload checksum mismatch");
  for (std::size_t c = 0; c < h.symbol_min.size(); ++c)
    if (h.symbol_min[c] >= h.symbol_max[c])
      fail(ErrorKind::kCorruptStream, "bitstream has an empty symbol range");
  const std::size_t count =
      static_cast<std::size_t>(h.latent_channels) * h.latent_height * h.latent_width;
  const auto symbols = rc_decode(coded, table_for(model, h), count);
  Tensor latent({h.latent_channels, h.latent_height, h.latent_width});
  for (std::size_t i = 0; i < count; ++i) latent[i] = symbols[i];
  ad::NoGradGuard guard;
  return decode_latent(model, ad::constant(std::move(latent)), ad::constant(y), true)
      .x_hat.value();
}

Tensor blocked_forward(const ImagePair& pair, Block which, const Model& model) {
  ImagePair p = pair;
  if (which == Block::kSideInfo) p.y.fill(0.5);
  else p.x.fill(0.5);
  ad::NoGradGuard guard;
  return forward(model, p, QuantMode::kEval).x_hat.value();
}

// --- checkpoints -----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'N', 'D', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    fail(ErrorKind::kCorruptStream, "checkpoint truncated: " + path.string());
  return v;
}

std::string get_string(std::istream& in, std::uint32_t n, const fs::path& path) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n))
    fail(ErrorKind::kCorruptStream, "checkpoint truncated: " + path.string());
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, 4);
    put(out, kCheckpointVersion);
    const std::string cfg = model.config().to_json().dump(2);
    put(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    put(out, static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& [name, var] : model.parameters()) {
      put(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      const Tensor& t = var.value();
      put(out, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put(out, static_cast<std::int32_t>(d));
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    const ModelHash h = model.hash();
    out.write(reinterpret_cast<const char*>(h.data()), h.size());
    if (!out) fail(ErrorKind::kIo, "failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Model load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    fail(ErrorKind::kCorruptStream, "not an NDCC checkpoint: " + path.string());
  if (get<std::uint32_t>(in, path) != kCheckpointVersion)
    fail(ErrorKind::kCorruptStream, "unsupported checkpoint version: " + path.string());
  const std::string cfg = get_string(in, get<std::uint32_t>(in, path), path);
  Model model(ModelConfig::from_json(nlohmann::json::parse(cfg)));
  const auto count = get<std::uint32_t>(in, path);
  if (count != model.parameters().size())
    fail(ErrorKind::kCorruptStream, "checkpoint parameter count does not match its config");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, get<std::uint32_t>(in, path), path);
    ad::Var var = model.parameter(name);
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(get<std::int32_t>(in, path));
    if (shape != var.shape())
      fail(ErrorKind::kCorruptStream, "checkpoint tensor " + name + " has shape " +
                                          shape_string(shape) + ", expected " +
                                          shape_string(var.shape()));
    Tensor& t = var.mutable_value();
    if (!in.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
      fail(ErrorKind::kCorruptStream, "checkpoint truncated: " + path.string());
  }
  ModelHash stored{};
  if (!in.read(reinterpret_cast<char*>(stored.data()), stored.size()))
    fail(ErrorKind::kCorruptStream, "checkpoint truncated: " + path.string());
  if (stored != model.hash())
    fail(ErrorKind::kCorruptStream, "checkpoint hash mismatch: " + path.string());
  return model;
}

}  // namespace ndcc
