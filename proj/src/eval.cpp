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

#include "ndcc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ndcc/error.hpp"
#include "ndcc/image_io.hpp"
#include "ndcc/metrics.hpp"

namespace ndcc {

namespace fs = std::filesystem;

ImageEval evaluate_pair(const Model& model, const ImagePair& pair) {
  pair.validate();
  const int h = pair.x.dim(1);
  const int w = pair.x.dim(2);
  const Bitstream stream = compress(pair.x, model);
  const Tensor x_hat = decompress(stream, pair.y, model);

  ImageEval r;
  r.pair_id = pair.pair_id;
  {
    ad::NoGradGuard guard;
    const Tensor latent = quantize(analysis_transform(pair.x, model.g_ax_spec, model.g_ax),
                                   QuantMode::kEval, nullptr);
    r.bits_estimated = estimated_bits(latent, model);
  }
  r.payload_bytes = stream.payload.size() - 4;
  r.file_bytes = serialize_bitstream(stream).size();
  r.bpp_estimated = bpp(r.bits_estimated, h, w);
  r.bpp_coded = bpp(8.0 * static_cast<double>(r.payload_bytes), h, w);
  r.ms_ssim = ms_ssim(x_hat, pair.x);
  return r;
}

std::vector<RdRow> rd_sweep(const std::vector<NamedModel>& models,
                            const std::vector<ImagePair>& pairs, const std::string& split) {
  for (const auto& m : models) {
    check_arg(m.model != nullptr, "rd_sweep: null model " + m.id);
    if (!(m.model->config().preprocess == models.front().model->config().preprocess))
      fail(ErrorKind::kInvalidArgument,
           "rd_sweep: checkpoint " + m.id + " uses different preprocessing than " +
               models.front().id);
  }
  std::vector<RdRow> rows;
  for (const auto& m : models) {
    const ModelConfig& cfg = m.model->config();
    RdRow mean{m.id, cfg.name, cfg.lambda, split, "MEAN", 0, 0, 0, 0};
    for (const auto& p : pairs) {
      const ImageEval e = evaluate_pair(*m.model, p);
      rows.push_back({m.id, cfg.name, cfg.lambda, split, e.pair_id, e.bpp_estimated, e.bpp_coded,
                      e.ms_ssim, to_db(e.ms_ssim)});
      mean.bpp_estimated += e.bpp_estimated;
      mean.bpp_coded += e.bpp_coded;
      mean.ms_ssim += e.ms_ssim;
    }
    if (!pairs.empty()) {
      const double n = static_cast<double>(pairs.size());
      mean.bpp_estimated /= n;
      mean.bpp_coded /= n;
      mean.ms_ssim /= n;
      mean.ms_ssim_db = to_db(mean.ms_ssim);
      rows.push_back(mean);
    }
  }
  return rows;
}

void write_rd_csv(const fs::path& path, const std::vector<RdRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(17);
  out << "model_id,lambda,split,pair_id,bpp_estimated,bpp_coded,ms_ssim,ms_ssim_db\n";
  for (const auto& r : rows)
    out << r.model_id << ',' << r.lambda << ',' << r.split << ',' << r.pair_id << ','
        << r.bpp_estimated << ',' << r.bpp_coded << ',' << r.ms_ssim << ',' << r.ms_ssim_db
        << '\n';
}

std::vector<MonotonicityFlag> monotonicity_report(const std::vector<RdRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::vector<const RdRow*>> groups;
  for (const auto& r : rows)
    if (r.pair_id == "MEAN") groups[{r.family, r.split}].push_back(&r);
  std::vector<MonotonicityFlag> flags;
  for (auto& [key, g] : groups) {
    std::stable_sort(g.begin(), g.end(),
                     [](const RdRow* a, const RdRow* b) { return a->lambda < b->lambda; });
    for (std::size_t i = 1; i < g.size(); ++i)
      if (g[i]->lambda > g[i - 1]->lambda && g[i]->ms_ssim < g[i - 1]->ms_ssim)
        flags.push_back({key.first, key.second, g[i - 1]->lambda, g[i]->lambda,
                         g[i - 1]->ms_ssim, g[i]->ms_ssim});
  }
  return flags;
}

AblationReport ablate_cams(const ModelConfig& base, const std::vector<int>& counts,
                           const std::vector<ImagePair>& train_set,
                           const std::vector<ImagePair>& val_set,
                           const std::vector<ImagePair>& test_set, const TrainSchedule& schedule,
                           const std::optional<fs::path>& out_dir, double bpp_tolerance) {
  check_arg(!counts.empty(), "ablate_cams: no CAM counts given");
  for (int c : counts)
    check_arg(c >= 0 && c < base.synthesis_layers(),
              "ablate_cams: CAM count " + std::to_string(c) + " out of range");
  check_arg(!test_set.empty(), "ablate_cams: empty test split");
  std::vector<int> sorted = counts;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  AblationReport report;
  for (int c : sorted) {
    ModelConfig cfg = base;
    cfg.cam_count = c;
    cfg.name = base.name + "-cam" + std::to_string(c);
    TrainOptions opts;
    if (out_dir) opts.out_dir = *out_dir / ("cams_" + std::to_string(c));
    const TrainResult t = train(cfg, train_set, val_set, schedule, opts);
    const auto rows = rd_sweep({{cfg.name, &t.model}}, test_set, "test");
    const RdRow& mean = rows.back();
    report.rows.push_back({c, cfg.lambda, mean.bpp_estimated, mean.bpp_coded, mean.ms_ssim,
                           mean.ms_ssim_db, t.diverged});
    if (t.diverged) report.notes.push_back(cfg.name + ": " + t.message);
  }
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    const AblationRow& lo = report.rows[i - 1];
    const AblationRow& hi = report.rows[i];
    std::ostringstream note;
    const double rel = std::abs(hi.bpp_estimated - lo.bpp_estimated) /
                       std::max(lo.bpp_estimated, 1e-12);
    note << hi.cam_count << " vs " << lo.cam_count << " CAMs: ms_ssim " << hi.ms_ssim << " vs "
         << lo.ms_ssim << ", bpp " << hi.bpp_estimated << " vs " << lo.bpp_estimated;
    if (rel > bpp_tolerance) {
      note << " (bpp not matched, skipped)";
    } else if (hi.ms_ssim < lo.ms_ssim) {
      note << " (ordering violated)";
      report.ordering_holds = false;
    }
    report.notes.push_back(note.str());
  }
  if (out_dir) write_ablation_csv(*out_dir / "ablation.csv", report);
  return report;
}

void write_ablation_csv(const fs::path& path, const AblationReport& report) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(17);
  out << "cam_count,lambda,bpp_estimated,bpp_coded,ms_ssim,ms_ssim_db,diverged\n";
  for (const auto& r : report.rows)
    out << r.cam_count << ',' << r.lambda << ',' << r.bpp_estimated << ',' << r.bpp_coded << ','
        << r.ms_ssim << ',' << r.ms_ssim_db << ',' << (r.diverged ? 1 : 0) << '\n';
}

Tensor normalize_map(const Tensor& map) {
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  Tensor out(map.shape());
  if (map.size() == 0 || !(*hi > *lo)) return out;
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = (map[i] - *lo) / span;
  return out;
}

namespace {

Tensor channel_map(const Tensor& features, int channel) {
  const int h = features.dim(1);
  const int w = features.dim(2);
  Tensor out({1, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) out.at(0, i, j) = features.at(channel, i, j);
  return out;
}

}  // namespace

std::vector<fs::path> dump_alignment(const Model& model, const ImagePair& pair, int layer,
                                     const std::vector<int>& channels, const fs::path& out_dir) {
  const int cams = model.config().cam_count;
  check_arg(layer >= 1 && layer <= cams,
            "dump_alignment: layer " + std::to_string(layer) + " must be in [1, " +
                std::to_string(cams) + "]");
  ad::NoGradGuard guard;
  const LatentBundle b = forward(model, pair, QuantMode::kEval);
  const auto idx = static_cast<std::size_t>(layer - 1);
  const Tensor& vx = b.vx_features[idx].value();
  const Tensor& vy = b.vy_features[idx].value();
  const Tensor& vc = b.cam_features[idx].value();
  for (int c : channels)
    check_arg(c >= 0 && c < vx.dim(0), "dump_alignment: channel " + std::to_string(c) +
                                           " out of range [0, " + std::to_string(vx.dim(0)) +
                                           ")");
  std::vector<fs::path> written;
  const std::string stem = pair.pair_id + "_layer" + std::to_string(layer) + "_ch";
  for (int c : channels) {
    const std::pair<const char*, const Tensor*> maps[] = {{"v_x", &vx}, {"v_y", &vy},
                                                          {"v_cam", &vc}};
    for (const auto& [label, t] : maps) {
      const fs::path p = out_dir / (stem + std::to_string(c) + "_" + label + ".png");
      write_png(p, normalize_map(channel_map(*t, c)));
      written.push_back(p);
    }
  }
  return written;
}

PrivateCommon private_common(const Model& model, const ImagePair& pair) {
  PrivateCommon r;
  {
    ad::NoGradGuard guard;
    r.reconstruction = forward(model, pair, QuantMode::kEval).x_hat.value();
  }
  r.private_part = blocked_forward(pair, Block::kSideInfo, model);
  r.common_part = blocked_forward(pair, Block::kInput, model);
  return r;
}

std::vector<fs::path> dump_private_common(const Model& model, const ImagePair& pair,
                                          const fs::path& out_dir) {
  const PrivateCommon pc = private_common(model, pair);
  const std::vector<fs::path> paths = {out_dir / (pair.pair_id + "_reconstruction.png"),
                                       out_dir / (pair.pair_id + "_private.png"),
                                       out_dir / (pair.pair_id + "_common.png")};
  write_png(paths[0], pc.reconstruction);
  write_png(paths[1], pc.private_part);
  write_png(paths[2], pc.common_part);
  return paths;
}

}  // namespace ndcc
