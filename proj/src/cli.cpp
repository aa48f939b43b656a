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

#include "ndcc/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>

#include <nlohmann/json.hpp>

#include "ndcc/error.hpp"
#include "ndcc/eval.hpp"
#include "ndcc/image_io.hpp"
#include "ndcc/model.hpp"
#include "ndcc/training.hpp"

namespace ndcc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal failure\n"
    "  2  usage error (unknown flag, invalid argument, bad config)\n"
    "  3  I/O error (missing or unreadable file)\n"
    "  4  model hash mismatch between bitstream and checkpoint\n"
    "  5  corrupt bitstream or checkpoint\n"
    "  6  training diverged (last good checkpoint saved)\n";

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> cams;
  std::string preset;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path output_dir(const Common& c, const std::string& command) {
  if (!c.out.empty()) return c.out;
  const char* env = std::getenv(kOutputEnv);
  return fs::path(env && *env ? env : "ndcc_out") / command;
}

// Config file: {"model": {...}, "schedule": {...}}; every field optional.
struct RunSettings {
  ModelConfig model;
  TrainSchedule schedule;
};

RunSettings load_settings(const Common& c) {
  json file = json::object();
  if (!c.config.empty()) file = read_json(c.config);
  json model = file.value("model", json::object());
  if (!c.preset.empty()) model["preset"] = c.preset;
  if (c.lambda) model["lambda"] = *c.lambda;
  if (c.cams) model["cam_count"] = *c.cams;
  if (c.seed) model["init_seed"] = *c.seed;
  RunSettings s;
  try {
    s.model = ModelConfig::from_json(model);
    s.schedule = TrainSchedule::from_json(file.value("schedule", json::object()),
                                          TrainSchedule::from_preset(s.model.preset));
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, "config: " + std::string(e.what()));
  }
  if (c.seed) s.schedule.seed = *c.seed;
  return s;
}

std::vector<ImagePair> load_split(const fs::path& root, const std::string& which,
                                  const PreprocessConfig& pre, bool swap = false) {
  DatasetSplit split = DatasetSplit::load(root);
  split.swap_augment = swap;
  return load_pair_dataset(root, split, which, pre).load_all();
}

Tensor load_image(const fs::path& path, const PreprocessConfig& pre) {
  if (!fs::exists(path)) fail(ErrorKind::kIo, "no such file: " + path.string());
  return pre.apply(read_png(path));
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) fail(ErrorKind::kInvalidArgument, std::string("missing ") + what);
  if (!fs::exists(path)) fail(ErrorKind::kIo, std::string(what) + " not found: " + path);
}

int cmd_synth(const Common& c, int count, double val_fraction, double test_fraction,
              std::ostream& out) {
  check_arg(count >= 0, "count must be non-negative");
  check_arg(val_fraction >= 0 && test_fraction >= 0 && val_fraction + test_fraction <= 1,
            "split fractions must be in [0, 1] and sum to at most 1");
  SyntheticSpec spec;
  if (!c.config.empty()) spec = SyntheticSpec::from_json(read_json(c.config));
  if (c.seed) spec.seed = *c.seed;
  spec.validate();
  const fs::path root = output_dir(c, "synth");
  fs::create_directories(root / "left");
  fs::create_directories(root / "right");
  std::mt19937_64 seeds(spec.seed);
  DatasetSplit split;
  const int n_test = static_cast<int>(std::lround(count * test_fraction));
  const int n_val = static_cast<int>(std::lround(count * val_fraction));
  for (int i = 0; i < count; ++i) {
    SyntheticSpec s = spec;
    s.seed = seeds();
    ImagePair p = generate_synthetic_pair(s);
    char id[32];
    std::snprintf(id, sizeof id, "pair_%05d", i);
    write_png(root / "left" / (std::string(id) + ".png"), p.x);
    write_png(root / "right" / (std::string(id) + ".png"), p.y);
    if (i < count - n_test - n_val) split.train.push_back(id);
    else if (i < count - n_test) split.val.push_back(id);
    else split.test.push_back(id);
  }
  split.save(root);
  write_json(root / "synth_config.json",
             {{"command", "synth"}, {"count", count}, {"val_fraction", val_fraction},
              {"test_fraction", test_fraction}, {"spec", spec.to_json()}});
  out << "wrote " << count << " pairs to " << root.string() << '\n';
  return kExitOk;
}

int cmd_train(const Common& c, std::optional<int> iters, std::optional<double> lr, bool swap,
              int progress, std::ostream& out) {
  require_file(c.data, "--data directory");
  RunSettings s = load_settings(c);
  if (iters) s.schedule.max_iters = *iters;
  if (lr) s.schedule.learning_rate = *lr;
  s.schedule.validate();
  const fs::path dir = output_dir(c, "train");
  write_json(dir / "run_config.json", {{"command", "train"},
                                       {"data", c.data},
                                       {"swap_augment", swap},
                                       {"model", s.model.to_json()},
                                       {"schedule", s.schedule.to_json()}});
  const auto train_set = load_split(c.data, "train", s.model.preprocess, swap);
  const auto val_set = load_split(c.data, "val", s.model.preprocess);
  TrainOptions opts;
  opts.out_dir = dir;
  opts.progress_every = progress;
  const TrainResult r = train(s.model, train_set, val_set, s.schedule, opts);
  if (r.diverged) fail(ErrorKind::kDiverged, r.message);
  out << "checkpoint " << (dir / "model.ckpt").string() << " hash " << hash_hex(r.model.hash())
      << '\n';
  return kExitOk;
}

int cmd_eval(const Common& c, const std::vector<std::string>& ckpts, const std::string& split,
             std::ostream& out) {
  const fs::path dir = output_dir(c, "eval");
  write_json(dir / "run_config.json",
             {{"command", "eval"}, {"checkpoints", ckpts}, {"data", c.data}, {"split", split}});
  std::vector<Model> models;
  for (const auto& p : ckpts) {
    require_file(p, "checkpoint");
    models.push_back(load_checkpoint(p));
  }
  std::vector<RdRow> rows;
  if (!models.empty()) {
    require_file(c.data, "--data directory");
    std::vector<NamedModel> named;
    for (std::size_t i = 0; i < models.size(); ++i)
      named.push_back({fs::path(ckpts[i]).stem().string() + ":" + models[i].config().name,
                       &models[i]});
    for (const auto& m : models)
      if (!(m.config().preprocess == models.front().config().preprocess))
        fail(ErrorKind::kInvalidArgument, "checkpoints use different preprocessing");
    rows = rd_sweep(named, load_split(c.data, split, models.front().config().preprocess), split);
  }
  write_rd_csv(dir / "rd.csv", rows);
  for (const auto& f : monotonicity_report(rows))
    out << "monotonicity: " << f.family << " (" << f.split << ") ms_ssim drops from "
        << f.ms_ssim_low << " at lambda " << f.lambda_low << " to " << f.ms_ssim_high
        << " at lambda " << f.lambda_high << '\n';
  out << "wrote " << (dir / "rd.csv").string() << '\n';
  return kExitOk;
}

int cmd_compress(const Common& c, const std::string& ckpt, const std::string& input,
                 std::ostream& out) {
  require_file(ckpt, "checkpoint");
  require_file(input, "input image");
  const Model model = load_checkpoint(ckpt);
  const Tensor x = load_image(input, model.config().preprocess);
  const fs::path path = c.out.empty() ? output_dir(c, "compress") /
                                            (fs::path(input).stem().string() + ".ndcc")
                                      : fs::path(c.out);
  const auto bytes = serialize_bitstream(compress(x, model));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::kIo, "failed writing " + path.string());
  write_json(path.string() + ".json",
             {{"command", "compress"}, {"checkpoint", ckpt}, {"input", input}});
  out << "wrote " << bytes.size() << " bytes to " << path.string() << '\n';
  return kExitOk;
}

int cmd_decompress(const Common& c, const std::string& ckpt, const std::string& input,
                   const std::string& side, std::ostream& out) {
  require_file(ckpt, "checkpoint");
  require_file(input, "bitstream");
  require_file(side, "side-information image");
  const Model model = load_checkpoint(ckpt);
  std::ifstream f(input, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot read " + input);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
  const Tensor y = load_image(side, model.config().preprocess);
  const Tensor x_hat = decompress(parse_bitstream(bytes), y, model);
  const fs::path path = c.out.empty() ? output_dir(c, "decompress") /
                                            (fs::path(input).stem().string() + ".png")
                                      : fs::path(c.out);
  write_png(path, x_hat);
  write_json(path.string() + ".json", {{"command", "decompress"},
                                       {"checkpoint", ckpt},
                                       {"input", input},
                                       {"side", side}});
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_viz(const Common& c, const std::string& ckpt, const std::string& pair_id, int layer,
            const std::vector<int>& channels, std::ostream& out) {
  require_file(ckpt, "checkpoint");
  require_file(c.data, "--data directory");
  check_arg(!pair_id.empty(), "missing --pair");
  const Model model = load_checkpoint(ckpt);
  const PairDataset ds(c.data, {pair_id}, false, model.config().preprocess);
  const ImagePair pair = ds.get(0);
  const fs::path dir = output_dir(c, "viz");
  write_json(dir / "run_config.json", {{"command", "viz"},
                                       {"checkpoint", ckpt},
                                       {"data", c.data},
                                       {"pair", pair_id},
                                       {"layer", layer},
                                       {"channels", channels}});
  std::size_t files = 0;
  if (layer > 0) files += dump_alignment(model, pair, layer, channels, dir).size();
  files += dump_private_common(model, pair, dir).size();
  out << "wrote " << files << " images to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_ablate(const Common& c, const std::vector<int>& counts, std::optional<int> iters,
               std::ostream& out) {
  require_file(c.data, "--data directory");
  RunSettings s = load_settings(c);
  if (iters) s.schedule.max_iters = *iters;
  s.schedule.validate();
  const fs::path dir = output_dir(c, "ablate");
  write_json(dir / "run_config.json", {{"command", "ablate"},
                                       {"data", c.data},
                                       {"counts", counts},
                                       {"model", s.model.to_json()},
                                       {"schedule", s.schedule.to_json()}});
  const auto& pre = s.model.preprocess;
  const AblationReport r = ablate_cams(s.model, counts, load_split(c.data, "train", pre),
                                       load_split(c.data, "val", pre),
                                       load_split(c.data, "test", pre), s.schedule, dir);
  std::ofstream report(dir / "report.txt", std::ios::trunc);
  for (const auto& n : r.notes) {
    out << n << '\n';
    report << n << '\n';
  }
  const std::string verdict = std::string("ordering (more CAMs >= fewer CAMs): ") +
                              (r.ordering_holds ? "holds" : "violated");
  out << verdict << '\n';
  report << verdict << '\n';
  return kExitOk;
}

void add_common(CLI::App* app, Common& c, bool model_flags) {
  app->add_option("--config", c.config, "Config file (JSON)");
  app->add_option("--data", c.data, "Dataset root with left/, right/ and split lists");
  app->add_option("--out", c.out, "Output path (default: $NDCC_OUT/<command>)");
  app->add_option("--seed", c.seed, "Random seed");
  if (model_flags) {
    app->add_option("--lambda", c.lambda, "Rate-distortion trade-off")
        ->check(CLI::PositiveNumber);
    app->add_option("--cams", c.cams, "Number of CAM layers")->check(CLI::Range(0, 3));
    app->add_option("--preset", c.preset, "Model scale")
        ->check(CLI::IsMember({"desk", "full"}));
  }
}

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kShape:
      return kExitUsage;
    case ErrorKind::kIo:
      return kExitIo;
    case ErrorKind::kHashMismatch:
      return kExitHashMismatch;
    case ErrorKind::kCorruptStream:
      return kExitCorruptStream;
    case ErrorKind::kDiverged:
      return kExitDiverged;
  }
  return kExitFailure;
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distributed stereo image codec with cross-attention side information", "ndcc"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);
  Common c;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic stereo dataset");
  add_common(synth, c, false);
  int count = 10;
  double val_fraction = 0.1, test_fraction = 0.1;
  synth->add_option("--count", count, "Number of pairs")->check(CLI::NonNegativeNumber);
  synth->add_option("--val-fraction", val_fraction, "Share of pairs in the val split");
  synth->add_option("--test-fraction", test_fraction, "Share of pairs in the test split");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, c, true);
  std::optional<int> iters;
  std::optional<double> lr;
  bool swap = false;
  int progress = 0;
  train_cmd->add_option("--iters", iters, "Override max iterations")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr", lr, "Override initial learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_flag("--swap", swap, "Add swapped (y, x) pairs to the training split");
  train_cmd->add_option("--progress", progress, "Print progress every N iterations");

  auto* eval_cmd = app.add_subcommand("eval", "Rate-distortion evaluation of checkpoints");
  add_common(eval_cmd, c, false);
  std::vector<std::string> ckpts;
  std::string split = "test";
  eval_cmd->add_option("--ckpt", ckpts, "Checkpoint (repeatable)");
  eval_cmd->add_option("--split", split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test"}));

  auto* comp = app.add_subcommand("compress", "Encode one image to a .ndcc bitstream");
  add_common(comp, c, false);
  std::string ckpt, input, side;
  comp->add_option("--ckpt", ckpt, "Checkpoint")->required();
  comp->add_option("--input", input, "Input PNG")->required();

  auto* decomp = app.add_subcommand("decompress", "Decode a .ndcc bitstream with side information");
  add_common(decomp, c, false);
  decomp->add_option("--ckpt", ckpt, "Checkpoint")->required();
  decomp->add_option("--input", input, "Bitstream file")->required();
  decomp->add_option("--side", side, "Side-information PNG")->required();

  auto* viz = app.add_subcommand("viz", "Feature alignment and private/common renderings");
  add_common(viz, c, false);
  std::string pair_id;
  int layer = 0;
  std::vector<int> channels;
  viz->add_option("--ckpt", ckpt, "Checkpoint")->required();
  viz->add_option("--pair", pair_id, "Pair id under --data")->required();
  viz->add_option("--layer", layer, "CAM layer for alignment maps (0 skips them)");
  viz->add_option("--channels", channels, "Feature channels to render")->delimiter(',');

  auto* ablate = app.add_subcommand("ablate", "Train and compare models with different CAM counts");
  add_common(ablate, c, true);
  std::vector<int> counts = {0, 1, 2, 3};
  ablate->add_option("--counts", counts, "CAM counts")->delimiter(',');
  ablate->add_option("--iters", iters, "Override max iterations")->check(CLI::NonNegativeNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      // Subcommand --help.
      for (auto* sub : app.get_subcommands()) out << sub->help();
      return kExitOk;
    }
    err << "error: usage: " << one_line(e.what()) << '\n';
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(c, count, val_fraction, test_fraction, out);
    if (*train_cmd) return cmd_train(c, iters, lr, swap, progress, out);
    if (*eval_cmd) return cmd_eval(c, ckpts, split, out);
    if (*comp) return cmd_compress(c, ckpt, input, out);
    if (*decomp) return cmd_decompress(c, ckpt, input, side, out);
    if (*viz) return cmd_viz(c, ckpt, pair_id, layer, channels, out);
    if (*ablate) return cmd_ablate(c, counts, iters, out);
  } catch (const Error& e) {
    err << "error: " << error_kind_name(e.kind()) << ": " << one_line(e.what()) << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << error_kind_name(ErrorKind::kIo) << ": " << one_line(e.what()) << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace ndcc::cli
