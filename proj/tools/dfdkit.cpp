// dfdkit: mining, preprocessing, training, evaluation, benchmarks and
// inspection from one binary. Exit codes: 0 success, 1 contract violation,
// 2 I/O failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dfd/app/config.hpp"
#include "dfd/bench/recipes.hpp"
#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/data/compress.hpp"
#include "dfd/data/extract.hpp"
#include "dfd/data/frame_io.hpp"
#include "dfd/mining/landmarks.hpp"
#include "dfd/mining/mask.hpp"
#include "dfd/mining/segments.hpp"
#include "dfd/nn/serialize.hpp"
#include "dfd/signal/filters.hpp"
#include "dfd/signal/temporal_noise.hpp"
#include "dfd/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace dfd;
using nlohmann::json;

namespace {

constexpr int kExitContract = 1;
constexpr int kExitIo = 2;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
  bool quiet = false;
};

// File, then --set overrides, then dedicated flags (already turned into overrides).
json effective_config(const Common& c, const std::vector<std::string>& flag_overrides) {
  json cfg = app::default_config();
  if (!c.config_file.empty()) app::merge_config(cfg, app::load_config_file(c.config_file));
  for (const auto& o : c.overrides) app::apply_override(cfg, o);
  for (const auto& o : flag_overrides) app::apply_override(cfg, o);
  if (c.seed) cfg["seed"] = *c.seed;
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<fs::path> track_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".landmarks") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// One class ("real"), one subset; a sequence per segment of each track.
data::DatasetManifest segment_manifest(const std::vector<std::pair<std::string, std::vector<mining::Segment>>>& tracks,
                                       const fs::path& frames_root) {
  data::DatasetManifest m;
  data::ClassNode cls{"real", 0, {{"mined", {}}}};
  for (const auto& [stem, segs] : tracks) {
    if (segs.empty()) continue;
    data::Subject subj{stem, {}};
    for (const auto& s : segs)
      subj.sequences.push_back({stem + "_" + std::to_string(s.start), (frames_root / stem).string(), s.start, s.length(), 25.0});
    cls.subsets[0].subjects.push_back(subj);
  }
  m.classes = {cls};
  return m;
}

int run_mine(const Common& common, const std::string& tracks_dir, const std::string& videos_dir,
             const std::string& out_dir, const std::vector<std::string>& flags) {
  const json cfg = effective_config(common, flags);
  const auto files = track_files(tracks_dir);
  if (files.empty()) {
    std::cerr << "no tracks found in " << tracks_dir << "\n";
    return kExitIo;
  }
  app::write_config(out_dir, cfg);
  const mining::FrameBudget budget = app::frame_budget(cfg);
  const mining::MaskCropConfig crop{cfg["mining"]["crop_margin"], cfg["mining"]["crop_size"]};
  json report{{"budget", {{"lo", budget.lo}, {"hi", budget.hi}}}, {"tracks", json::object()}, {"failed", json::array()}};
  std::vector<std::pair<std::string, std::vector<mining::Segment>>> train_segs, test_segs;
  bool any_failed = false;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    try {
      const mining::LandmarkTrack track = mining::read_track(f);
      std::vector<std::size_t> cuts;
      std::optional<FrameSequence> video;
      if (!videos_dir.empty() && fs::is_directory(fs::path(videos_dir) / stem)) {
        video = data::read_frames(fs::path(videos_dir) / stem);
        require(video->size() == track.size(), "track " + stem + " has " + std::to_string(track.size()) +
                                                   " frames, video has " + std::to_string(video->size()));
        cuts = mining::detect_scene_cuts(*video, cfg["mining"]["scene_cut_threshold"]);
      }
      const auto r = mining::mine_track(track, cuts, budget);
      report["tracks"][stem] = mining::to_json(r);
      train_segs.push_back({stem, r.selection.training});
      test_segs.push_back({stem, r.selection.test_pool});
      if (video)
        for (const auto& s : r.segments)
          for (std::size_t k = s.start; k <= s.end; ++k)
            data::write_png(fs::path(out_dir) / "frames" / stem / data::frame_name(k),
                            mining::mask_and_crop(video->frames[k], *track.frames[k], crop));
    } catch (const std::exception& e) {
      log().error("{}: {}", f.string(), e.what());
      report["failed"].push_back({{"file", f.string()}, {"error", e.what()}});
      any_failed = true;
    }
  }
  write_json(fs::path(out_dir) / "report.json", report);
  const fs::path frames_root = fs::path(out_dir) / "frames";
  write_json(fs::path(out_dir) / "train_manifest.json", data::to_json(segment_manifest(train_segs, frames_root)));
  write_json(fs::path(out_dir) / "test_manifest.json", data::to_json(segment_manifest(test_segs, frames_root)));
  std::cout << "mined " << files.size() << " tracks";
  if (any_failed) std::cout << " (" << report["failed"].size() << " failed)";
  std::cout << "\n";
  return any_failed ? kExitIo : 0;
}

data::BoxTrack boxes_from_track(const mining::LandmarkTrack& track, double margin) {
  data::BoxTrack boxes(track.size());
  for (std::size_t k = 0; k < track.size(); ++k)
    if (track.frames[k]) {
      const auto b = mining::face_crop_box(std::span<const mining::Point>(track.frames[k]->points), margin);
      boxes[k] = data::CropBox{b.cx(), b.cy(), b.width()};
    }
  return boxes;
}

int run_preprocess(const Common& common, const std::string& frames_dir, const std::string& landmarks,
                   const std::string& out_dir, const std::vector<std::string>& flags) {
  const json cfg = effective_config(common, flags);
  const json& p = cfg["preprocess"];
  const FrameSequence video = data::read_frames(frames_dir, p["fps"].get<double>());
  if (video.empty()) throw IoError("no frames in " + frames_dir);
  const auto track = mining::read_track(fs::path(landmarks));
  require(track.size() == video.size(), "preprocess: landmark track and video differ in length");
  app::write_config(out_dir, cfg);
  data::CompressionPipelineConfig pc;
  pc.target_side = p["target_side"];
  pc.quality = p["lossless"].get<bool>() ? data::Quality::lossless_setting() : data::Quality::crf_setting(p["crf"]);
  pc.extract = {25.0, p["smoothing_window"], p["output_size"]};
  auto encoder = data::make_encoder(p["strict_encoder"], p["encoder"]);
  data::PipelineTrace trace;
  const auto crops = data::compression_pipeline(video, boxes_from_track(track, p["box_margin"]), pc, *encoder, &trace);
  data::write_frames(fs::path(out_dir) / "crops", crops.crops);
  write_json(fs::path(out_dir) / "trace.json", {{"stages", trace.stages},
                                                {"encoder", encoder->name()},
                                                {"crop_side", crops.crop_side},
                                                {"frames", crops.crops.size()},
                                                {"omitted", crops.omitted}});
  std::cout << "wrote " << crops.crops.size() << " crops (" << pc.quality.str() << ", " << encoder->name() << ")\n";
  return 0;
}

train::SampleStore<float> load_store(const signal::TemporalNoiseConfig& tn,
                                     std::initializer_list<const data::DatasetManifest*> parts) {
  train::SampleStore<float> store(tn);
  for (const auto* m : parts) store.load(*m);
  return store;
}

int run_train(const Common& common, const std::string& data_dir, bool synthetic, const std::string& out_dir) {
  const json cfg = effective_config(common, {});
  app::write_config(out_dir, cfg);
  const auto tn = app::temporal_config(cfg);
  const auto tc = app::train_config(cfg);
  const auto spec = app::model_spec(cfg);
  data::ManifestSplits splits;
  std::optional<train::SampleStore<float>> store;
  if (synthetic) {
    const auto ex = app::experiment_config(cfg);
    const auto corpus = bench::generate_corpus(ex.corpus);
    bench::write_corpus(corpus, fs::path(out_dir) / "corpus");
    splits = data::load_splits(fs::path(out_dir) / "corpus" / "manifest.json");
  } else {
    require(!data_dir.empty(), "train: give --data or --synthetic");
    splits = data::load_splits(fs::path(data_dir) / "manifest.json");
  }
  store.emplace(load_store(tn, {&splits.train, &splits.val}));
  nn::Detector<float> model(spec, tc.seed, tn);
  const auto rec = train::run_training(model, *store, splits.train, splits.val, tc, fs::path(out_dir) / "checkpoints");
  train::write_run_record(fs::path(out_dir) / "run.jsonl", rec);
  std::printf("%s: best epoch %zu, val accuracy %.4f, stopped: %s\n", rec.variant.c_str(), rec.best_epoch,
              rec.best_val_accuracy, rec.stop_reason.c_str());
  if (!rec.best_checkpoint.empty()) std::printf("best checkpoint: %s\n", rec.best_checkpoint.c_str());
  return rec.diverged ? kExitContract : 0;
}

int run_eval(const Common& common, const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             const std::string& out_dir) {
  const json cfg = effective_config(common, {});
  auto model = nn::load_detector<float>(checkpoint);
  const auto splits = data::load_splits(fs::path(data_dir) / "manifest.json");
  const data::DatasetManifest* m = split == "test" ? &splits.test : split == "val" ? &splits.val : &splits.train;
  const auto store = load_store(model.temporal_config(), {m});
  const double acc = train::weighted_test_accuracy(model, store, *m, cfg["training"]["eval_batch_size"]);
  if (!out_dir.empty()) {
    app::write_config(out_dir, cfg);
    write_json(fs::path(out_dir) / "eval.json", {{"checkpoint", checkpoint}, {"split", split}, {"weighted_accuracy", acc}});
  }
  std::printf("weighted accuracy (%s): %.4f\n", split.c_str(), acc);
  return 0;
}

void print_table(const json& table, const std::string& indent = "") {
  for (auto it = table.begin(); it != table.end(); ++it) {
    if (it.value().is_object()) {
      std::printf("%s%s\n", indent.c_str(), it.key().c_str());
      print_table(it.value(), indent + "  ");
    } else if (it.value().is_number_float()) {
      std::printf("%s%-16s %.4f\n", indent.c_str(), it.key().c_str(), it.value().get<double>());
    } else {
      std::printf("%s%-16s %s\n", indent.c_str(), it.key().c_str(), it.value().dump().c_str());
    }
  }
}

int run_bench(const Common& common, const std::string& recipe, const std::string& corpus_dir, const std::string& out_dir) {
  const json cfg = effective_config(common, {});
  const auto ex = app::experiment_config(cfg);
  if (!corpus_dir.empty()) {
    const auto corpus = bench::generate_corpus(ex.corpus);
    bench::write_corpus(corpus, corpus_dir);
    app::write_config(corpus_dir, cfg);
    std::printf("wrote %zu clips to %s\n", corpus.clips.size(), corpus_dir.c_str());
    if (recipe.empty()) return 0;
  }
  require(!recipe.empty(), "bench: give --recipe (" + bench::recipe_list() + ") or --write-corpus");
  const auto out = bench::run_recipe(recipe, ex);
  json results = json::array();
  for (const auto& r : out.results) results.push_back(bench::to_json(r));
  if (!out_dir.empty()) {
    app::write_config(out_dir, cfg);
    write_json(fs::path(out_dir) / "report.json", {{"recipe", out.name}, {"table", out.table}, {"results", results}});
  }
  std::printf("recipe %s\n", out.name.c_str());
  print_table(out.table, "  ");
  return 0;
}

int run_inspect(const Common& common, const std::string& frames_dir, std::size_t frame, const std::string& checkpoint,
                bool trace, const std::string& out_dir) {
  const json cfg = effective_config(common, {});
  std::optional<nn::Detector<float>> model;
  if (!checkpoint.empty()) model.emplace(nn::load_detector<float>(checkpoint));
  if (trace) {
    const nn::Detector<float> m = model ? std::move(*model) : nn::Detector<float>(app::model_spec(cfg));
    std::printf("%-28s %-18s %-16s %10s %6s\n", "layer", "kind", "output", "params", "rf");
    for (const auto& e : m.trace())
      std::printf("%-28s %-18s %-16s %10zu %6zu\n", e.name.c_str(), e.kind.c_str(), shape_str(e.output).c_str(),
                  e.parameters, e.receptive_field);
    std::printf("total parameters: %zu\n", m.parameter_count());
    if (frames_dir.empty()) return 0;
  }
  require(!frames_dir.empty(), "inspect: give --frames or --trace");
  const FrameSequence video = data::read_frames(frames_dir);
  require(frame >= signal::kFramesBefore && frame + signal::kFramesAfter < video.size(),
          "inspect: frame " + std::to_string(frame) + " lacks temporal support (needs " +
              std::to_string(signal::kFramesBefore) + " before and " + std::to_string(signal::kFramesAfter) + " after)");
  const auto tn = model && model->has_threshold() ? model->temporal_config() : app::temporal_config(cfg);
  const double t = model && model->has_threshold() ? static_cast<double>(model->threshold().item()) : tn.initial_threshold;
  signal::FrameWindow<double> window;
  for (std::size_t k = frame - signal::kFramesBefore; k <= frame + signal::kFramesAfter; ++k)
    window.frames.push_back(signal::normalize_color<double>(video.frames[k]));
  window.center = signal::kFramesBefore;
  Tape<double> tape;
  const auto color = window.frames[signal::kFramesBefore];
  const auto temporal = signal::temporal_noise(tape, window, Tensor<double>::scalar(t), tn);
  const fs::path out(out_dir);
  app::write_config(out, cfg);
  data::write_png(out / "color.png", signal::to_image(color));
  data::write_png(out / "spatial.png", signal::to_image(signal::spatial_highpass(color)));
  data::write_png(out / "temporal.png", signal::to_image(temporal));
  std::printf("wrote color.png, spatial.png, temporal.png for frame %zu (threshold %.6f)\n", frame, t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dfdkit: face-manipulation detection toolkit"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_file, "JSON config file");
    sub->add_option("--set", common.overrides, "dotted-key=value override (repeatable)");
    sub->add_option("--seed", common.seed, "random seed");
    sub->add_flag("-v,--verbose", common.verbosity, "more logging (-vv for trace)");
    sub->add_flag("-q,--quiet", common.quiet, "only warnings and errors");
  };

  std::string tracks_dir, videos_dir, out_dir, frames_dir, landmarks, data_dir, checkpoint, split = "test", recipe,
      corpus_dir;
  std::optional<std::size_t> budget_lo, budget_hi;
  std::optional<int> crf;
  std::optional<double> target_side;
  bool strict = false, lossless = false, synthetic = false, trace = false;
  std::size_t frame = 0;

  auto* mine = app.add_subcommand("mine", "filter landmark tracks into training and test segments");
  add_common(mine);
  mine->add_option("--tracks", tracks_dir, "directory of *.landmarks files")->required();
  mine->add_option("--videos", videos_dir, "directory with one frame directory per track (for cuts and crops)");
  mine->add_option("--out", out_dir, "output directory")->required();
  mine->add_option("--budget-lo", budget_lo, "lower training-frame budget");
  mine->add_option("--budget-hi", budget_hi, "upper training-frame budget");

  auto* pre = app.add_subcommand("preprocess", "resize, compress and crop one video");
  add_common(pre);
  pre->add_option("--frames", frames_dir, "directory of video frames (PNG)")->required();
  pre->add_option("--landmarks", landmarks, "landmark track of the video")->required();
  pre->add_option("--out", out_dir, "output directory")->required();
  pre->add_option("--crf", crf, "encoder constant rate factor");
  pre->add_flag("--lossless", lossless, "lossless encoding");
  pre->add_option("--target-side", target_side, "average face side after resizing, px");
  pre->add_flag("--strict-encoder", strict, "fail instead of falling back to the built-in stub encoder");

  auto* tr = app.add_subcommand("train", "train a detector");
  add_common(tr);
  tr->add_option("--data", data_dir, "corpus directory with manifest.json");
  tr->add_flag("--synthetic", synthetic, "generate a synthetic corpus from the config");
  tr->add_option("--out", out_dir, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "weighted accuracy of a checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "checkpoint stem (without .json/.bin)")->required();
  ev->add_option("--data", data_dir, "corpus directory with manifest.json")->required();
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", out_dir, "optional output directory");

  auto* be = app.add_subcommand("bench", "synthetic corpora and toy-scale experiments");
  add_common(be);
  be->add_option("--recipe", recipe, "recipe name");
  be->add_option("--write-corpus", corpus_dir, "write the configured synthetic corpus here");
  be->add_option("--out", out_dir, "output directory for the report");

  auto* in = app.add_subcommand("inspect", "preprocessed planes of a frame, or a model's shape trace");
  add_common(in);
  in->add_option("--frames", frames_dir, "directory of face crops (PNG)");
  in->add_option("--frame", frame, "frame index");
  in->add_option("--checkpoint", checkpoint, "take the threshold (and trace) from this checkpoint");
  in->add_flag("--trace", trace, "print the layer trace");
  in->add_option("--out", out_dir, "output directory (default: current directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitContract;
  }
  log().set_level(common.quiet ? spdlog::level::warn
                        : common.verbosity >= 2 ? spdlog::level::trace
                        : common.verbosity == 1 ? spdlog::level::debug
                                                : spdlog::level::info);
  try {
    if (mine->parsed()) {
      std::vector<std::string> flags;
      if (budget_lo) flags.push_back("mining.budget_lo=" + std::to_string(*budget_lo));
      if (budget_hi) flags.push_back("mining.budget_hi=" + std::to_string(*budget_hi));
      return run_mine(common, tracks_dir, videos_dir, out_dir, flags);
    }
    if (pre->parsed()) {
      std::vector<std::string> flags;
      if (crf) flags.push_back("preprocess.crf=" + std::to_string(*crf));
      if (lossless) flags.push_back("preprocess.lossless=true");
      if (target_side) flags.push_back("preprocess.target_side=" + json(*target_side).dump());
      if (strict) flags.push_back("preprocess.strict_encoder=true");
      return run_preprocess(common, frames_dir, landmarks, out_dir, flags);
    }
    if (tr->parsed()) return run_train(common, data_dir, synthetic, out_dir);
    if (ev->parsed()) return run_eval(common, checkpoint, data_dir, split, out_dir);
    if (be->parsed()) return run_bench(common, recipe, corpus_dir, out_dir);
    if (in->parsed()) return run_inspect(common, frames_dir, frame, checkpoint, trace, out_dir.empty() ? "." : out_dir);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitContract;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitContract;
  }
  return kExitContract;
}
