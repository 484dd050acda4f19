#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "dfd/app/config.hpp"
#include "dfd/bench/synthetic.hpp"
#include "dfd/data/frame_io.hpp"
#include "dfd/mining/landmarks.hpp"
#include "dfd/mining/segments.hpp"
#include "support/golden_track.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

// Runs the CLI from `work` with stdout and stderr captured together.
CliRun dfdkit(const std::string& args, const fs::path& work) {
  const fs::path log = work / "cli.log";
  const std::string cmd = "cd " + work.string() + " && " + std::string(DFDKIT_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dfdkit_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }
  fs::path dir_;
};

// Small corpus shared by the train and eval cases.
const char* kSmallCorpus =
    " --set corpus.subjects=4 --set corpus.sequences=1 --set corpus.val_subjects=1 --set corpus.test_subjects=1"
    " --set corpus.frames=20 --set model.input_size=32 --set corpus.fake=spatial_blur -q";

}  // namespace

TEST_F(Cli, MineReportMatchesLibrary) {
  const auto g = dfd::testing::golden_track();
  fs::create_directories(dir_ / "tracks");
  dfd::mining::write_track(dir_ / "tracks" / "golden.landmarks", g.track);
  const CliRun r = dfdkit("mine --tracks " + p("tracks") + " --out " + p("out") + " --budget-lo 100 --budget-hi 120", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  const json report = read_json(dir_ / "out" / "report.json");
  const auto expected = dfd::mining::to_json(dfd::mining::mine_track(dfd::mining::read_track(dir_ / "tracks" / "golden.landmarks"), {}, g.budget));
  EXPECT_EQ(report["tracks"]["golden"].dump(), expected.dump());
  EXPECT_EQ(report["budget"]["lo"], 100);
  EXPECT_EQ(report["budget"]["hi"], 120);
  const json cfg = read_json(dir_ / "out" / "config.json");
  EXPECT_EQ(cfg["mining"]["budget_lo"], 100);
  EXPECT_EQ(cfg["mining"]["budget_hi"], 120);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "train_manifest.json"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "test_manifest.json"));
}

TEST_F(Cli, MineWithoutTracksIsIoError) {
  fs::create_directories(dir_ / "empty");
  const CliRun r = dfdkit("mine --tracks " + p("empty") + " --out " + p("out"), dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("no tracks found"), std::string::npos) << r.out;
}

TEST_F(Cli, MineReportsBrokenTrackAndContinues) {
  const auto g = dfd::testing::golden_track();
  fs::create_directories(dir_ / "tracks");
  dfd::mining::write_track(dir_ / "tracks" / "good.landmarks", g.track);
  std::ofstream(dir_ / "tracks" / "bad.landmarks") << "not a track\n";
  const CliRun r = dfdkit("mine --tracks " + p("tracks") + " --out " + p("out") + " -q", dir_);
  EXPECT_EQ(r.code, 2);
  const json report = read_json(dir_ / "out" / "report.json");
  EXPECT_TRUE(report["tracks"].contains("good"));
  ASSERT_EQ(report["failed"].size(), 1u);
  EXPECT_NE(report["failed"][0]["file"].get<std::string>().find("bad.landmarks"), std::string::npos);
}

TEST_F(Cli, UnknownConfigKeyIsContractViolation) {
  fs::create_directories(dir_ / "tracks");
  const CliRun r = dfdkit("mine --tracks " + p("tracks") + " --out " + p("out") + " --set mining.budget=3", dir_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("mining.budget"), std::string::npos) << r.out;
}

TEST_F(Cli, UnknownRecipeListsAvailable) {
  const CliRun r = dfdkit("bench --recipe nope", dir_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("ablation"), std::string::npos) << r.out;
}

TEST_F(Cli, PreprocessWritesCropsAndTrace) {
  dfd::bench::SyntheticSceneConfig scene;
  scene.frames = 12;
  std::mt19937_64 rng(3);
  const auto look = dfd::bench::random_look(rng);
  const auto motion = dfd::bench::random_motion(scene, rng);
  const auto clip = dfd::bench::render_clip(scene, look, motion, dfd::bench::real_offsets(scene, motion, 0.05));
  dfd::data::write_frames(dir_ / "frames", clip.video);
  const auto track = dfd::bench::synth_track(scene, clip, rng, false);
  dfd::mining::write_track(dir_ / "video.landmarks", track);
  const CliRun r = dfdkit("preprocess --frames " + p("frames") + " --landmarks " + p("video.landmarks") + " --out " +
                           p("out") + " --crf 40 --target-side 64 --set preprocess.output_size=48",
                       dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  const json trace = read_json(dir_ / "out" / "trace.json");
  ASSERT_EQ(trace["stages"].size(), 3u);
  EXPECT_EQ(trace["stages"][0], "normalize_resolution");
  EXPECT_EQ(trace["stages"][1].get<std::string>().rfind("compress:", 0), 0u);
  EXPECT_NE(trace["stages"][1].get<std::string>().find("crf40"), std::string::npos) << trace.dump();
  EXPECT_EQ(trace["stages"][2], "extract_detector_frames");
  EXPECT_EQ(trace["frames"], 12);
  EXPECT_EQ(read_json(dir_ / "out" / "config.json")["preprocess"]["crf"], 40);
  const auto crops = dfd::data::read_frames(dir_ / "out" / "crops");
  ASSERT_EQ(crops.size(), 12u);
  EXPECT_EQ(crops.frames[0].width, 48u);
}

TEST_F(Cli, StrictEncoderWithoutBackendFails) {
  fs::create_directories(dir_ / "frames");
  dfd::data::write_png(dir_ / "frames" / "000000.png", dfd::Image(16, 16));
  dfd::mining::LandmarkTrack track;
  track.frame_width = track.frame_height = 16;
  track.frames.push_back(std::nullopt);
  dfd::mining::write_track(dir_ / "v.landmarks", track);
  const CliRun r = dfdkit("preprocess --frames " + p("frames") + " --landmarks " + p("v.landmarks") + " --out " + p("out") +
                           " --strict-encoder --set preprocess.encoder=/nonexistent/ffmpeg",
                       dir_);
  EXPECT_NE(r.code, 0) << r.out;
}

TEST_F(Cli, TrainThenEval) {
  const CliRun w = dfdkit("bench --write-corpus " + p("corpus") + kSmallCorpus, dir_);
  ASSERT_EQ(w.code, 0) << w.out;
  const CliRun t = dfdkit("train --data " + p("corpus") + " --out " + p("run") + kSmallCorpus +
                           " --set model.variant=S --set stopping.max_epochs=2 --set stopping.policy=\"A\"",
                       dir_);
  ASSERT_EQ(t.code, 0) << t.out;
  std::ifstream in(dir_ / "run" / "run.jsonl");
  std::string line, last;
  std::size_t lines = 0;
  while (std::getline(in, line)) last = line, ++lines;
  EXPECT_EQ(lines, 3u);
  const json summary = json::parse(last);
  EXPECT_TRUE(summary["summary"].get<bool>());
  const std::string best = summary["best_checkpoint"];
  ASSERT_TRUE(fs::exists(best + ".json")) << best;
  EXPECT_TRUE(fs::exists(best + ".bin"));

  const CliRun e = dfdkit("eval --checkpoint " + best + " --data " + p("corpus") + " --split test", dir_);
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_TRUE(std::regex_search(e.out, std::regex(R"(weighted accuracy \(test\): [01]\.\d{4}\n)"))) << e.out;
  EXPECT_FALSE(fs::exists(dir_ / "eval.json"));

  const CliRun missing = dfdkit("eval --checkpoint " + p("run/nothing") + " --data " + p("corpus"), dir_);
  EXPECT_EQ(missing.code, 2);
}

TEST_F(Cli, InspectStaticClipHasZeroTemporalNoise) {
  dfd::Image img(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>((x * 7 + y * 3 + c * 40) % 256) / 255.0f;
  dfd::FrameSequence video;
  for (int i = 0; i < 12; ++i) video.frames.push_back(img);
  dfd::data::write_frames(dir_ / "frames", video);
  const CliRun r = dfdkit("inspect --frames " + p("frames") + " --frame 6 --out " + p("out"), dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto t = dfd::data::read_png(dir_ / "out" / "temporal.png");
  float peak = 0;
  for (float v : t.pixels) peak = std::max(peak, v);
  EXPECT_EQ(peak, 0.0f);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "spatial.png"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "color.png"));

  const CliRun edge = dfdkit("inspect --frames " + p("frames") + " --frame 0 --out " + p("out"), dir_);
  EXPECT_EQ(edge.code, 1);
}

TEST_F(Cli, InspectTracePrintsParameterTotal) {
  const CliRun r = dfdkit("inspect --trace --set model.variant=\"CST\"", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("total parameters:"), std::string::npos);
}

TEST(Config, OverrideParsesJsonOrString) {
  json cfg = dfd::app::default_config();
  dfd::app::apply_override(cfg, "optimizer.initial_lr=0.5");
  dfd::app::apply_override(cfg, "model.variant=CS_noT");
  dfd::app::apply_override(cfg, "bench.seeds=[1,2,3]");
  EXPECT_EQ(cfg["optimizer"]["initial_lr"], 0.5);
  EXPECT_EQ(cfg["model"]["variant"], "CS_noT");
  EXPECT_EQ(cfg["bench"]["seeds"].size(), 3u);
  EXPECT_EQ(dfd::app::train_config(cfg).optimizer.initial_lr, 0.5);
}

TEST(Config, RejectsUnknownKeysAndKindMismatch) {
  json cfg = dfd::app::default_config();
  EXPECT_THROW(dfd::app::apply_override(cfg, "optimizer.lr=0.1"), dfd::ContractViolation);
  EXPECT_THROW(dfd::app::apply_override(cfg, "training.batch_size=2.5"), dfd::ContractViolation);
  EXPECT_THROW(dfd::app::apply_override(cfg, "optimizer.momentum=fast"), dfd::ContractViolation);
  EXPECT_THROW(dfd::app::apply_override(cfg, "noequals"), dfd::ContractViolation);
  EXPECT_THROW(dfd::app::merge_config(cfg, json{{"model", 3}}), dfd::ContractViolation);
  // integer into a float slot is fine
  EXPECT_NO_THROW(dfd::app::apply_override(cfg, "optimizer.momentum=1"));
}

TEST(Config, PolicyMustBeKnown) {
  json cfg = dfd::app::default_config();
  dfd::app::apply_override(cfg, "stopping.policy=C");
  EXPECT_THROW(dfd::app::train_config(cfg), dfd::ContractViolation);
}
