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

// Runs the twelve acceptance criteria and prints one PASS/FAIL line each.
// Exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "ms_ssim_oracle.hpp"
#include "ndcc/cam.hpp"
#include "ndcc/entropy.hpp"
#include "ndcc/error.hpp"
#include "ndcc/eval.hpp"
#include "ndcc/layers.hpp"
#include "ndcc/metrics.hpp"
#include "ndcc/model.hpp"
#include "ndcc/training.hpp"
#include "test_util.hpp"

namespace ndcc {
namespace {

using testing::numeric_grad;
using testing::project;
using testing::random_tensor;
using testing::relative_error;
using testing::synthetic_pair;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Shared desk-scale fixtures: one dataset and the 3-CAM seed-1 training run
// serve criteria 5, 6, 10, 11 and 12.
struct DeskRun {
  std::vector<ImagePair> train, val, test;
  std::optional<TrainResult> result;
  double seconds = 0;
};

std::vector<ImagePair> make_pairs(std::uint64_t first, int n, const std::string& prefix) {
  std::vector<ImagePair> out;
  for (int i = 0; i < n; ++i) {
    ImagePair p = synthetic_pair(first + static_cast<std::uint64_t>(i));
    p.pair_id = prefix + std::to_string(i);
    out.push_back(std::move(p));
  }
  return out;
}

DeskRun& desk() {
  static DeskRun run = [] {
    DeskRun r;
    r.train = make_pairs(1000, 64, "train_");
    r.val = make_pairs(5000, 8, "val_");
    r.test = make_pairs(9000, 20, "test_");
    return r;
  }();
  return run;
}

TrainResult train_desk(int cams, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::desk();
  cfg.cam_count = cams;
  cfg.init_seed = 7 + seed;
  TrainSchedule s = TrainSchedule::desk();
  s.seed = seed;
  return train(cfg, desk().train, desk().val, s);
}

const TrainResult& desk_result() {
  DeskRun& d = desk();
  if (!d.result) {
    const auto t0 = Clock::now();
    d.result = train_desk(3, 1);
    d.seconds = seconds_since(t0);
  }
  return *d.result;
}

// --- 1 ---------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::map<std::string, double> worst;
  const auto note = [&](const std::string& what, double err) {
    worst[what] = std::max(worst[what], err);
  };

  for (bool inverse : {false, true}) {
    const std::string label = inverse ? "igdn" : "gdn";
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = random_tensor({4, 3, 3}, rng, -2, 2);
      Tensor beta = random_tensor({4}, rng, 0.5, 1.5);
      Tensor gamma = random_tensor({4, 4}, rng, 0.0, 0.3);
      const Tensor r = random_tensor({4, 3, 3}, rng);
      const ad::Var vx = ad::parameter(x), vb = ad::parameter(beta), vg = ad::parameter(gamma);
      ad::backward(project(ad::gdn(vx, vb, vg, inverse), r));
      const auto f = [&] {
        ad::NoGradGuard guard;
        return project(ad::gdn(ad::constant(x), ad::constant(beta), ad::constant(gamma), inverse),
                       r)
            .value()
            .item();
      };
      note(label, relative_error(vx.grad(), numeric_grad(f, x, 1e-6)));
      note(label, relative_error(vb.grad(), numeric_grad(f, beta, 1e-6)));
      note(label, relative_error(vg.grad(), numeric_grad(f, gamma, 1e-6)));
    }
  }

  for (int trial = 0; trial < 5; ++trial) {
    FactorizedDensity d(ad::parameter(
        random_tensor({2, FactorizedDensity::kParamsPerChannel}, rng, -1.0, 1.0)));
    Tensor v = random_tensor({2, 3, 2}, rng, -2, 2);
    const ad::Var vv = ad::parameter(v);
    ad::backward(rate_bits(d.likelihood(vv)));
    const Tensor dp = d.params().grad();
    const auto f = [&] { return rate_bits(bin_likelihood(v, d)); };
    note("density", relative_error(vv.grad(), numeric_grad(f, v, 1e-6)));
    note("density", relative_error(dp, numeric_grad(f, d.params().mutable_value(), 1e-6)));
  }

  for (int trial = 0; trial < 3; ++trial) {
    CamConfig cfg;
    cfg.patch = {2, 2, 2};
    cfg.embed_dim = 8;
    cfg.attn_dim = 8;
    cfg.heads = 2;
    CamParams p = CamParams::init(cfg, rng);
    Tensor x = random_tensor({4, 4, 4}, rng), y = random_tensor({4, 4, 4}, rng);
    const Tensor r = random_tensor({4, 4, 4}, rng);
    const ad::Var vx = ad::parameter(x), vy = ad::parameter(y);
    ad::backward(project(cam_forward(vx, vy, p).output, r));
    const auto f = [&] {
      const Tensor out = cam_forward(x, y, p);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
      return s;
    };
    note("cam", relative_error(vx.grad(), numeric_grad(f, x, 1e-6)));
    note("cam", relative_error(vy.grad(), numeric_grad(f, y, 1e-6)));
    for (ad::Var* m : {&p.embed, &p.query, &p.key, &p.value, &p.unpack}) {
      const Tensor analytic = m->grad();
      note("cam", relative_error(analytic, numeric_grad(f, m->mutable_value(), 1e-6)));
    }
  }

  const Model tiny(testing::tiny_config());
  note("loss", testing::loss_gradient_error(tiny, synthetic_pair(102, 32, 32), 103));

  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = secs < 120.0;
  std::ostringstream s;
  for (const auto& [k, e] : worst) {
    v.pass = v.pass && e < 1e-3;
    s << k << " " << fmt("%.2e", e) << ", ";
  }
  s << fmt("%.1f s", secs);
  v.detail = s.str();
  return v;
}

// --- 2 ---------------------------------------------------------------------

Verdict attention_normalization() {
  std::mt19937_64 rng(201);
  double worst_sum = 0.0;
  bool bounded = true;
  for (int trial = 0; trial < 1000; ++trial) {
    CamConfig cfg;
    cfg.patch = {2, 2, 2};
    cfg.embed_dim = 8;
    cfg.attn_dim = 8;
    cfg.heads = 1 + trial % 2;
    const CamParams p = CamParams::init(cfg, rng);
    const double scale = trial % 10 == 0 ? 50.0 : 2.0;
    const ad::Var x = ad::constant(random_tensor({4, 4, 4}, rng, -scale, scale));
    const ad::Var y = ad::constant(random_tensor({4, 4, 4}, rng, -scale, scale));
    ad::NoGradGuard guard;
    for (const Tensor& w : cam_forward(x, y, p).weights)
      for (int r = 0; r < w.dim(0); ++r) {
        double s = 0.0;
        for (int c = 0; c < w.dim(1); ++c) {
          bounded = bounded && w.at(r, c) >= 0.0 && w.at(r, c) <= 1.0;
          s += w.at(r, c);
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
  }
  CamConfig cfg;
  cfg.patch = {2, 2, 2};
  cfg.embed_dim = 8;
  cfg.attn_dim = 8;
  cfg.heads = 2;
  CamParams p = CamParams::init(cfg, rng);
  p.query = ad::parameter(Tensor({8, 8}, 0.0));
  double worst_uniform = 0.0;
  {
    ad::NoGradGuard guard;
    const auto out = cam_forward(ad::constant(random_tensor({4, 4, 4}, rng)),
                                 ad::constant(random_tensor({4, 4, 4}, rng)), p);
    for (const Tensor& w : out.weights)
      for (double x : w.storage()) worst_uniform = std::max(worst_uniform, std::abs(x - 1.0 / 8));
  }
  return {worst_sum < 1e-6 && bounded && worst_uniform < 1e-7,
          "max |row sum - 1| " + fmt("%.1e", worst_sum) + ", zero-query max |w - 1/N| " +
              fmt("%.1e", worst_uniform) + (bounded ? "" : ", weight outside [0,1]")};
}

// --- 3 ---------------------------------------------------------------------

Verdict tiling_inverse() {
  std::mt19937_64 rng(301);
  std::uniform_int_distribution<int> pick(1, 4);
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const PatchDims d{pick(rng), pick(rng), pick(rng)};
    const Shape shape{d.channels * pick(rng), d.height * pick(rng), d.width * pick(rng)};
    const Tensor t = random_tensor(shape, rng, -1e3, 1e3);
    ok += untile_patches(tile_patches(t, d), shape, d).identical(t) ? 1 : 0;
  }
  return {ok == 100, std::to_string(ok) + "/100 bitwise round trips"};
}

// --- 4 ---------------------------------------------------------------------

Verdict codec_round_trip() {
  std::mt19937_64 rng(401);
  int exact = 0;
  double worst_excess = -1e300;
  bool within = true;
  for (int table_i = 0; table_i < 20; ++table_i) {
    FactorizedDensity d(ad::parameter(
        random_tensor({1, FactorizedDensity::kParamsPerChannel}, rng, -3.0, 3.0)));
    const int lo = -20 - table_i, hi = 20 + table_i;
    const CdfTable t = build_cdf_table(d, lo, hi, 12 + table_i % 5);
    const ChannelCdf& ch = t.channels[0];
    std::vector<double> freq;
    for (int s = ch.v_min; s <= ch.v_max; ++s) freq.push_back(ch.freq(s));
    std::discrete_distribution<int> draw(freq.begin(), freq.end());
    std::vector<std::int32_t> symbols(100000);
    for (auto& s : symbols) s = ch.v_min + draw(rng);
    const auto bytes = rc_encode(symbols, t);
    exact += rc_decode(bytes, t, symbols.size()) == symbols ? 1 : 0;
    const double ideal = table_codelength_bits(symbols, t) / 8.0;
    const double limit = 1.01 * ideal + 32.0;
    within = within && static_cast<double>(bytes.size()) <= limit;
    worst_excess = std::max(worst_excess, static_cast<double>(bytes.size()) - ideal);
  }
  return {exact == 20 && within, std::to_string(exact) +
                                     "/20 tables exact, worst excess over ideal " +
                                     fmt("%.1f bytes", worst_excess)};
}

// --- 5, 6 ------------------------------------------------------------------

Verdict cross_path_equivalence() {
  const Model& m = desk_result().model;
  int same = 0;
  for (const ImagePair& p : desk().test) {
    const Tensor decoded = decompress(parse_bitstream(serialize_bitstream(compress(p.x, m))), p.y, m);
    ad::NoGradGuard guard;
    same += decoded.identical(forward(m, p, QuantMode::kEval).x_hat.value()) ? 1 : 0;
  }
  const int n = static_cast<int>(desk().test.size());
  return {same == n && n == 20,
          std::to_string(same) + "/" + std::to_string(n) + " bitwise-identical reconstructions"};
}

Verdict rate_consistency() {
  const Model& m = desk_result().model;
  bool ok = true;
  double worst_rel = 0.0, est_sum = 0.0, coded_sum = 0.0;
  for (const ImagePair& p : desk().test) {
    const ImageEval e = evaluate_pair(m, p);
    const double est_bytes = e.bits_estimated / 8.0;
    const double coded = static_cast<double>(e.payload_bytes);
    ok = ok && std::abs(coded - est_bytes) <= 0.02 * est_bytes + 64.0;
    worst_rel = std::max(worst_rel, std::abs(coded - est_bytes) / est_bytes);
    est_sum += e.bpp_estimated;
    coded_sum += e.bpp_coded;
  }
  const double n = static_cast<double>(desk().test.size());
  return {ok, "mean bpp estimated " + fmt("%.4f", est_sum / n) + " coded " +
                  fmt("%.4f", coded_sum / n) + ", worst relative gap " + fmt("%.2f%%", 100 * worst_rel)};
}

// --- 7 ---------------------------------------------------------------------

Verdict information_flow() {
  const Model& m = desk_result().model;
  const ImagePair base = synthetic_pair(701);
  const auto reference = serialize_bitstream(compress(base.x, m));
  std::mt19937_64 rng(702);
  int same = 0;
  for (int i = 0; i < 10; ++i) {
    ImagePair p = base;
    p.y = random_tensor(p.x.shape(), rng, 0.0, 1.0);
    // The pair is what a caller holds; compress only ever receives x.
    same += serialize_bitstream(compress(p.x, m)) == reference ? 1 : 0;
  }
  return {same == 10, std::to_string(same) + "/10 identical bitstreams across random y"};
}

// --- 8 ---------------------------------------------------------------------

Verdict ms_ssim_checks() {
  std::mt19937_64 rng(801);
  double worst_oracle = 0.0, worst_sym = 0.0;
  bool identity = true;
  for (int i = 0; i < 10; ++i) {
    const Tensor a = random_tensor({3, 176, 176}, rng, 0, 1);
    Tensor b = a;
    std::uniform_real_distribution<double> noise(-0.05 - 0.05 * i, 0.05 + 0.05 * i);
    for (double& v : b.storage()) v = std::clamp(v + noise(rng), 0.0, 1.0);
    const double ab = ms_ssim(a, b);
    worst_sym = std::max(worst_sym, std::abs(ab - ms_ssim(b, a)));
    worst_oracle = std::max(worst_oracle, std::abs(ab - testing::MsSsimOracle::evaluate(a, b)));
    identity = identity && ms_ssim(a, a) == 1.0;
  }
  return {identity && worst_sym < 1e-9 && worst_oracle < 1e-6,
          std::string(identity ? "identity exact" : "identity FAILED") + ", symmetry " +
              fmt("%.1e", worst_sym) + ", oracle " + fmt("%.1e", worst_oracle)};
}

// --- 9 ---------------------------------------------------------------------

Verdict density_validity() {
  std::mt19937_64 rng(901);
  bool monotone = true, floored = true;
  double worst_mass = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    FactorizedDensity d(ad::parameter(
        random_tensor({1, FactorizedDensity::kParamsPerChannel}, rng, -3.0, 3.0)));
    double prev = -1.0;
    for (double v = -80.0; v <= 80.0; v += 0.125) {
      const double c = d.cdf(0, v);
      monotone = monotone && c >= prev;
      prev = c;
    }
    const Tensor probe = random_tensor({1, 8, 8}, rng, -300, 300);
    const Tensor lik = bin_likelihood(probe, d);
    for (double p : lik.storage()) floored = floored && p >= std::ldexp(1.0, -15);
    const int lo = -40, hi = 40;
    double mass = d.cdf(0, lo - 0.5) + (1.0 - d.cdf(0, hi + 0.5));
    for (int v = lo; v <= hi; ++v) mass += d.bin_mass(0, v);
    worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
  }
  return {monotone && floored && worst_mass < 1e-6,
          std::string(monotone ? "monotone" : "NOT monotone") +
              (floored ? ", floor holds" : ", floor violated") + ", worst |mass - 1| " +
              fmt("%.1e", worst_mass)};
}

// --- 10 --------------------------------------------------------------------

double mean_loss(const std::vector<MetricsRow>& log, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += log[i].loss;
  return s / static_cast<double>(to - from);
}

Verdict training_smoke() {
  const TrainResult& r = desk_result();
  if (r.diverged) return {false, r.message};
  if (r.log.size() != 2000) return {false, "log has " + std::to_string(r.log.size()) + " rows"};
  const double early = mean_loss(r.log, 99, 200);
  const double late = mean_loss(r.log, 1900, 2000);
  std::map<std::string, double> groups;
  for (const auto& [name, norm] : r.first_grad_norms) groups[parameter_group(name)] += norm;
  std::string dead;
  for (const auto& [g, n] : groups)
    if (!(n > 0.0)) dead += " " + g;
  const double drop = 1.0 - late / early;
  const double secs = desk().seconds;
  return {drop >= 0.20 && dead.empty() && secs < 1800.0,
          "loss " + fmt("%.3f", early) + " -> " + fmt("%.3f", late) + " (" +
              fmt("%.1f%%", 100 * drop) + " lower), " + std::to_string(groups.size()) +
              " groups with gradient" + (dead.empty() ? "" : ", zero:" + dead) + ", " +
              fmt("%.0f s", secs)};
}

// --- 11 --------------------------------------------------------------------

struct Replicate {
  double ms3 = 0, ms0 = 0, bpp3 = 0, bpp0 = 0;
  bool holds = false;
};

Verdict cam_benefit(std::vector<std::string>& warnings) {
  int holds = 0;
  std::ostringstream s;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const TrainResult three = seed == 1 ? desk_result() : train_desk(3, seed);
    const TrainResult zero = train_desk(0, seed);
    const RdRow a = rd_sweep({{"cam3", &three.model}}, desk().test, "test").back();
    const RdRow b = rd_sweep({{"cam0", &zero.model}}, desk().test, "test").back();
    const bool matched = std::abs(a.bpp_estimated - b.bpp_estimated) <= 0.10 * b.bpp_estimated;
    const bool ok = matched && a.ms_ssim >= b.ms_ssim && !three.diverged && !zero.diverged;
    holds += ok ? 1 : 0;
    const std::string line = "seed " + std::to_string(seed) + ": ms_ssim " +
                             fmt("%.4f", a.ms_ssim) + " vs " + fmt("%.4f", b.ms_ssim) +
                             " at bpp " + fmt("%.3f", a.bpp_estimated) + " vs " +
                             fmt("%.3f", b.bpp_estimated) + (matched ? "" : " (bpp unmatched)");
    s << line << "; ";
    if (!ok) warnings.push_back("criterion 11 replicate miss, " + line);
  }
  s << holds << "/3 replicates hold";
  return {holds >= 2, s.str()};
}

// --- 12 --------------------------------------------------------------------

Verdict visualization_protocol() {
  const Model& m = desk_result().model;
  const auto& test = desk().test;
  int ok = 0, total = 0;
  for (std::size_t i = 0; i + 1 < test.size() && i < 10; i += 2) {
    const ImagePair& a = test[i];
    ImagePair other_x = test[i + 1];
    other_x.y = a.y;
    ImagePair other_y = test[i + 1];
    other_y.x = a.x;
    const PrivateCommon pa = private_common(m, a);
    ok += pa.common_part.identical(private_common(m, other_x).common_part) ? 1 : 0;
    ok += pa.private_part.identical(private_common(m, other_y).private_part) ? 1 : 0;
    total += 2;
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " blocking identities hold"};
}

}  // namespace
}  // namespace ndcc

int main() {
  using namespace ndcc;
  std::vector<std::string> warnings;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"attention normalization", attention_normalization},
      {"tiling inverse", tiling_inverse},
      {"codec round trip", codec_round_trip},
      {"cross-path equivalence", cross_path_equivalence},
      {"rate consistency", rate_consistency},
      {"information flow", information_flow},
      {"ms-ssim", ms_ssim_checks},
      {"density validity", density_validity},
      {"training smoke", training_smoke},
      {"directional cam benefit", [&] { return cam_benefit(warnings); }},
      {"visualization protocol", visualization_protocol},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  for (const auto& w : warnings) std::cout << "WARN " << w << std::endl;
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
