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

#include "ndcc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "ndcc/error.hpp"
#include "ndcc/image_io.hpp"

namespace ndcc {

namespace fs = std::filesystem;

void ImagePair::validate() const {
  check_shape(x.shape() == y.shape(), "pair " + pair_id + ": x " + shape_string(x.shape()) +
                                          " and y " + shape_string(y.shape()) + " differ");
  check_shape(x.rank() == 3 && x.dim(0) == 3, "pair " + pair_id + ": images must be (3, H, W)");
  for (const Tensor* t : {&x, &y})
    for (double v : t->values())
      check_arg(v >= 0.0 && v <= 1.0, "pair " + pair_id + ": values outside [0, 1]");
}

void SyntheticSpec::validate() const {
  check_arg(height > 0, "synthetic spec: height must be positive");
  check_arg(width > 0, "synthetic spec: width must be positive");
  check_arg(shapes >= 0, "synthetic spec: shapes must be >= 0");
  check_arg(disparity_px >= 0 && disparity_px < width,
            "synthetic spec: disparity_px must be in [0, width)");
  check_arg(occlusion_fraction >= 0.0 && occlusion_fraction < 1.0,
            "synthetic spec: occlusion_fraction must be in [0, 1)");
  check_arg(noise_std >= 0.0, "synthetic spec: noise_std must be >= 0");
  check_arg(pattern == "shapes" || pattern == "stripes",
            "synthetic spec: pattern must be \"shapes\" or \"stripes\"");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"height", height},       {"width", width},
          {"shapes", shapes},       {"disparity_px", disparity_px},
          {"occlusion_fraction", occlusion_fraction},
          {"noise_std", noise_std}, {"seed", seed},
          {"pattern", pattern}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.shapes = j.value("shapes", s.shapes);
  s.disparity_px = j.value("disparity_px", s.disparity_px);
  s.occlusion_fraction = j.value("occlusion_fraction", s.occlusion_fraction);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.seed = j.value("seed", s.seed);
  s.pattern = j.value("pattern", s.pattern);
  s.validate();
  return s;
}

namespace {

struct Rgb {
  double c[3];
};

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {{u(rng), u(rng), u(rng)}};
}

// Paints a random rectangle or disc into `canvas` restricted to the box
// [y0, y1) x [x0, x1).
void paint_shape(Tensor& canvas, std::mt19937_64& rng, int y0, int y1, int x0, int x1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int h = y1 - y0, w = x1 - x0;
  const Rgb color = random_color(rng);
  const bool disc = u(rng) < 0.5;
  const double cy = y0 + u(rng) * h, cx = x0 + u(rng) * w;
  const double ry = std::max(1.0, (0.1 + 0.3 * u(rng)) * h);
  const double rx = std::max(1.0, (0.1 + 0.3 * u(rng)) * w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
      const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
      if (inside)
        for (int c = 0; c < 3; ++c) canvas.at(c, y, x) = color.c[c];
    }
}

Tensor crop_columns(const Tensor& canvas, int begin, int width) {
  Tensor out({canvas.dim(0), canvas.dim(1), width});
  for (int c = 0; c < canvas.dim(0); ++c)
    for (int y = 0; y < canvas.dim(1); ++y)
      for (int x = 0; x < width; ++x) out.at(c, y, x) = canvas.at(c, y, begin + x);
  return out;
}

}  // namespace

ImagePair generate_synthetic_pair(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int height = spec.height, canvas_w = spec.width + spec.disparity_px;
  Tensor canvas({3, height, canvas_w});
  if (spec.pattern == "stripes") {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < canvas_w; ++x)
          canvas.at(c, y, x) = static_cast<double>((x * 7 + c) % 16) / 15.0;
  } else {
    const Rgb a = random_color(rng), b = random_color(rng);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < canvas_w; ++x) {
          const double t = (x + y) / static_cast<double>(canvas_w + height);
          canvas.at(c, y, x) = a.c[c] * (1.0 - t) + b.c[c] * t;
        }
    for (int i = 0; i < spec.shapes; ++i) paint_shape(canvas, rng, 0, height, 0, canvas_w);
  }

  ImagePair pair;
  pair.pair_id = "synth-" + std::to_string(spec.seed);
  pair.x = crop_columns(canvas, spec.disparity_px, spec.width);
  pair.y = crop_columns(canvas, 0, spec.width);

  if (spec.occlusion_fraction > 0.0) {
    const int patch = std::max(2, std::min(height, spec.width) / 4);
    const int rows = (height + patch - 1) / patch, cols = (spec.width + patch - 1) / patch;
    std::vector<int> cells(static_cast<std::size_t>(rows) * cols);
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    const auto count = static_cast<std::size_t>(std::lround(spec.occlusion_fraction * cells.size()));
    for (std::size_t i = 0; i < count; ++i) {
      const int y0 = (cells[i] / cols) * patch, x0 = (cells[i] % cols) * patch;
      const int y1 = std::min(height, y0 + patch), x1 = std::min(spec.width, x0 + patch);
      const Rgb fill = random_color(rng);
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) pair.y.at(c, y, x) = fill.c[c];
      paint_shape(pair.y, rng, y0, y1, x0, x1);
    }
  }
  if (spec.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (double& v : pair.y.storage()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  }
  return pair;
}

namespace {

// Area-average resampling weights: output i covers the input interval
// [i * scale, (i + 1) * scale).
std::vector<std::vector<std::pair<int, double>>> area_weights(int in, int out) {
  std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double lo = i * scale, hi = (i + 1) * scale;
    for (int j = static_cast<int>(std::floor(lo)); j < in && j < hi; ++j) {
      const double overlap = std::min(hi, j + 1.0) - std::max(lo, static_cast<double>(j));
      if (overlap > 0.0) w[i].emplace_back(j, overlap / scale);
    }
  }
  return w;
}

}  // namespace

Tensor preprocess(const Tensor& img, int crop_h, int crop_w, int target_h, int target_w) {
  check_shape(img.rank() == 3, "preprocess expects (C, H, W)");
  const int channels = img.dim(0), height = img.dim(1), width = img.dim(2);
  check_arg(crop_h > 0 && crop_w > 0 && crop_h <= height && crop_w <= width,
            "crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                " larger than image " + std::to_string(height) + "x" + std::to_string(width));
  check_arg(target_h > 0 && target_w > 0 && target_h <= crop_h && target_w <= crop_w,
            "target dims must not exceed crop dims");
  const int top = (height - crop_h) / 2, left = (width - crop_w) / 2;
  const auto wy = area_weights(crop_h, target_h);
  const auto wx = area_weights(crop_w, target_w);
  Tensor rows({channels, target_h, crop_w});
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < target_h; ++i)
      for (int x = 0; x < crop_w; ++x) {
        double s = 0.0;
        for (const auto& [j, w] : wy[i]) s += w * img.at(c, top + j, left + x);
        rows.at(c, i, x) = s;
      }
  Tensor out({channels, target_h, target_w});
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < target_h; ++i)
      for (int k = 0; k < target_w; ++k) {
        double s = 0.0;
        for (const auto& [j, w] : wx[k]) s += w * rows.at(c, i, j);
        out.at(c, i, k) = std::clamp(s, 0.0, 1.0);
      }
  return out;
}

Tensor PreprocessConfig::apply(const Tensor& img) const {
  if (!enabled()) return img;
  return preprocess(img, crop_h, crop_w, target_h, target_w);
}

nlohmann::json PreprocessConfig::to_json() const {
  return {{"crop", {crop_h, crop_w}}, {"target", {target_h, target_w}}};
}

PreprocessConfig PreprocessConfig::from_json(const nlohmann::json& j) {
  PreprocessConfig p;
  if (j.contains("crop")) {
    p.crop_h = j.at("crop").at(0);
    p.crop_w = j.at("crop").at(1);
  }
  if (j.contains("target")) {
    p.target_h = j.at("target").at(0);
    p.target_w = j.at("target").at(1);
  }
  return p;
}

void DatasetSplit::validate() const {
  std::set<std::string> seen;
  for (const auto* list : {&train, &val, &test})
    for (const std::string& id : *list)
      check_arg(seen.insert(id).second, "pair id '" + id + "' appears in more than one split");
}

const std::vector<std::string>& DatasetSplit::ids(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  fail(ErrorKind::kInvalidArgument, "unknown split '" + name + "'");
}

namespace {

std::vector<std::string> read_id_list(const fs::path& path) {
  std::vector<std::string> ids;
  std::ifstream in(path);
  if (!in) return ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

void write_id_list(const fs::path& path, const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const std::string& id : ids) out << id << '\n';
}

}  // namespace

DatasetSplit DatasetSplit::load(const fs::path& root) {
  DatasetSplit s;
  s.train = read_id_list(root / "train.txt");
  s.val = read_id_list(root / "val.txt");
  s.test = read_id_list(root / "test.txt");
  s.validate();
  return s;
}

void DatasetSplit::save(const fs::path& root) const {
  validate();
  fs::create_directories(root);
  write_id_list(root / "train.txt", train);
  write_id_list(root / "val.txt", val);
  write_id_list(root / "test.txt", test);
}

std::vector<std::string> list_pair_ids(const fs::path& root) {
  auto stems = [](const fs::path& dir) {
    std::set<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".png") out.insert(e.path().stem().string());
    return out;
  };
  const auto left = stems(root / "left"), right = stems(root / "right");
  std::vector<std::string> orphans;
  std::set_symmetric_difference(left.begin(), left.end(), right.begin(), right.end(),
                                std::back_inserter(orphans));
  if (!orphans.empty()) {
    std::string msg = "unpaired images under " + root.string() + ":";
    for (const std::string& o : orphans) msg += " " + o;
    fail(ErrorKind::kIo, msg);
  }
  return {left.begin(), left.end()};
}

PairDataset::PairDataset(fs::path root, const std::vector<std::string>& ids, bool swap_augment,
                         PreprocessConfig preprocess)
    : root_(std::move(root)), preprocess_(preprocess) {
  for (const std::string& id : ids) {
    for (const char* side : {"left", "right"}) {
      const fs::path p = root_ / side / (id + ".png");
      if (!fs::is_regular_file(p)) fail(ErrorKind::kIo, "missing image " + p.string());
    }
    entries_.push_back({id, false});
    if (swap_augment) entries_.push_back({id, true});
  }
}

ImagePair PairDataset::get(std::size_t i) const {
  const PairEntry& e = entries_.at(i);
  ImagePair pair;
  Tensor left = preprocess_.apply(read_png(root_ / "left" / (e.id + ".png")));
  Tensor right = preprocess_.apply(read_png(root_ / "right" / (e.id + ".png")));
  pair.x = e.swapped ? std::move(right) : std::move(left);
  pair.y = e.swapped ? std::move(left) : std::move(right);
  pair.pair_id = e.swapped ? e.id + "~swap" : e.id;
  pair.validate();
  return pair;
}

std::vector<ImagePair> PairDataset::load_all() const {
  std::vector<ImagePair> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(get(i));
  return out;
}

PairDataset load_pair_dataset(const fs::path& root, const DatasetSplit& split,
                              const std::string& which, PreprocessConfig preprocess) {
  split.validate();
  return PairDataset(root, split.ids(which), split.swap_augment, preprocess);
}

}  // namespace ndcc
