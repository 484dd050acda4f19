#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dfd/nn/architecture.hpp"
#include "dfd/nn/serialize.hpp"

using namespace dfd;
using namespace dfd::nn;

namespace {

template <typename S>
DetectorInputs<S> random_inputs(const Detector<S>& model, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t s = model.spec().input_size;
  DetectorInputs<S> in;
  in.color = Tensor<S>::uniform({n, 3, s, s}, rng, S(0), S(1));
  in.spatial = Tensor<S>::uniform({n, 3, s, s}, rng, S(0.4), S(0.6));
  in.temporal = Tensor<S>::uniform({n, 3, s, s}, rng, S(0), S(0.1));
  return in;
}

const TraceEntry& find(const std::vector<TraceEntry>& trace, const std::string& name) {
  for (const auto& e : trace)
    if (e.name == name) return e;
  throw std::runtime_error("missing trace entry " + name);
}

}  // namespace

TEST(EntryFlowSpec, ZerosOnlyAtEnds) {
  EXPECT_NO_THROW((EntryFlowSpec{{3, 32, 64, 0, 0, 0}}.validate()));
  EXPECT_NO_THROW((EntryFlowSpec{{0, 0, 72, 128, 256, 512}}.validate()));
  EXPECT_THROW((EntryFlowSpec{{3, 32, 0, 128, 0, 0}}.validate()), ContractViolation);
  EXPECT_THROW((EntryFlowSpec{{0, 0, 0, 0, 0, 0}}.validate()), ContractViolation);
}

TEST(DetectorSpec, UnknownVariantRejected) { EXPECT_THROW(make_spec("X"), ContractViolation); }

TEST(DetectorSpec, FusedInputWidthMustMatch) {
  DetectorSpec spec = make_spec("CST");
  spec.streams[0].entry.widths[2] = 70;
  EXPECT_THROW(validate(spec), ContractViolation);
}

TEST(DetectorSpec, ExitWidthsScaleProportionally) {
  EXPECT_EQ(exit_widths(728), (std::array<std::size_t, 3>{1024, 1536, 2048}));
  EXPECT_EQ(exit_widths(768), (std::array<std::size_t, 3>{1081, 1621, 2161}));
}

TEST(Architecture, FullWidthFeatureCounts) {
  for (const std::string v : {"C", "S"}) {
    Detector<float> m(make_spec(v));
    EXPECT_EQ(m.fused_width(), 728u) << v;
    EXPECT_EQ(find(m.trace(), v == "C" ? "color.stage_e.pool" : "spatial.stage_e.pool").output[0], 728u);
  }
  Detector<float> cs(make_spec("CS"));
  EXPECT_EQ(find(cs.trace(), "fusion").output, (Shape{728, 19, 19}));
  Detector<float> cst(make_spec("CST"));
  EXPECT_EQ(find(cst.trace(), "color_temporal.concat").output[0], 72u);
  EXPECT_EQ(find(cst.trace(), "fusion").output, (Shape{768, 19, 19}));
  EXPECT_EQ(find(cst.trace(), "middle1.sep1").output[0], 768u);
}

TEST(Architecture, EveryVariantProducesTwoFiniteScoresAt299) {
  for (const auto& v : variant_names()) {
    Detector<float> m(make_spec(v), 1);
    auto in = random_inputs(m, 1, 2);
    Tape<float> tape;
    auto scores = m.forward(tape, in, Mode::kEval);
    ASSERT_EQ(scores.shape(), (Shape{1, 2})) << v;
    for (float s : scores.values()) EXPECT_TRUE(std::isfinite(s)) << v;
    EXPECT_EQ(find(m.trace(), "exit.dense").output, (Shape{2}));
  }
}

TEST(Architecture, ToySpatialDetectorOn64px) {
  Detector<float> m(make_spec("S", 1.0 / 8, 64), 3);
  auto in = random_inputs(m, 2, 4);
  Tape<float> tape;
  auto scores = m.forward(tape, in, Mode::kTrain);
  EXPECT_EQ(scores.shape(), (Shape{2, 2}));
  EXPECT_EQ(m.fused_width(), 91u);
}

TEST(Architecture, TraceIsConsistentAndCountsParameters) {
  for (const auto& v : variant_names()) {
    Detector<double> m(make_spec(v, 1.0 / 8, 64));
    EXPECT_EQ(total_parameters(m.trace()), m.parameter_count()) << v;
  }
}

TEST(Architecture, CsNoTEqualsCstWithZeroTemporal) {
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    Detector<double> cst(make_spec("CST", 1.0 / 8, 64), 11);
    Detector<double> no_t(make_spec("CS_noT", 1.0 / 8, 64), 11);
    EXPECT_EQ(cst.parameter_count(), no_t.parameter_count());
    auto in = random_inputs(cst, 3, 5);
    in.temporal = Tensor<double>::zeros(in.color.shape());
    Tape<double> t1, t2;
    auto a = cst.forward(t1, in, mode);
    std::mt19937_64 rng(9);
    in.temporal = Tensor<double>::uniform(in.color.shape(), rng, 0.0, 1.0);
    auto b = no_t.forward(t2, in, mode);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
  }
}

TEST(Architecture, ParameterCountMonotoneInWidth) {
  for (const auto& v : variant_names()) {
    std::size_t prev = 0;
    for (double s : {1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2, 1.0}) {
      const std::size_t n = Detector<float>(make_spec(v, s, 64)).parameter_count();
      EXPECT_GT(n, prev) << v << " @ " << s;
      prev = n;
    }
  }
}

TEST(Architecture, ZerosDisableLayersLikeTruncation) {
  Rng r1(7), r2(7);
  EntryFlow<double> zeros("e", 3, {3, 32, 64, 0, 0, 0}, r1);
  // Explicit construction: two conv+BN+ReLU layers, nothing else.
  Conv2dLayer<double> a("a", 3, 32, 3, 2, 0, r2);
  BatchNormLayer<double> abn("abn", 32);
  Conv2dLayer<double> b("b", 32, 64, 3, 1, 0, r2);
  BatchNormLayer<double> bbn("bbn", 64);
  std::mt19937_64 rng(1);
  auto x = Tensor<double>::uniform({2, 3, 33, 33}, rng, 0.0, 1.0);
  Tape<double> tape;
  auto y1 = zeros.forward(tape, x, Mode::kTrain);
  auto y2 = ops::relu(tape, bbn.forward(tape, b.forward(tape, ops::relu(tape, abn.forward(tape, a.forward(tape, x), Mode::kTrain))), Mode::kTrain));
  ASSERT_EQ(y1.shape(), y2.shape());
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1.values()[i], y2.values()[i]);
  std::vector<NamedParameter<double>> p;
  std::vector<NamedBuffer<double>> buf;
  zeros.collect(p, buf);
  EXPECT_EQ(p.size(), 6u);
}

TEST(Architecture, FusionSizeMismatchNamesBothStreams) {
  DetectorSpec spec = make_spec("CS", 1.0 / 8, 64);
  spec.streams[1].entry.widths = {3, 32, 64, 128, 256, 0};
  try {
    Detector<float> m(spec);
    FAIL() << "expected a fusion error";
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("color"), std::string::npos) << msg;
    EXPECT_NE(msg.find("spatial"), std::string::npos) << msg;
  }
}

TEST(ReceptiveField, ChainComposition) {
  EXPECT_EQ(receptive_field({{3, 1}}), 3u);
  EXPECT_EQ(receptive_field({{3, 1}, {3, 1}}), 5u);
  EXPECT_EQ(receptive_field({{3, 2}, {3, 1}}), 7u);
}

TEST(ReceptiveField, CsFusionPointIsReported) {
  Detector<float> cs(make_spec("CS"));
  const std::size_t rf = receptive_field(cs.trace(), "fusion");
  log().info("CS fusion receptive field: {} px (17 quoted for the original realization)", rf);
  EXPECT_GT(rf, 17u);
  EXPECT_EQ(receptive_field(cs.trace(), "color.conv_a"), 3u);
  EXPECT_EQ(receptive_field(cs.trace(), "color.conv_b"), 7u);
}

TEST(Serialize, SpecJsonRoundTrip) {
  for (const auto& v : variant_names()) {
    DetectorSpec spec = make_spec(v, 0.25, 96);
    DetectorSpec back = spec_from_json(json::parse(to_json(spec).dump()));
    EXPECT_EQ(to_json(back), to_json(spec));
  }
  EXPECT_THROW(spec_from_json(json{{"width_scale", 1}}), ContractViolation);
}

TEST(Serialize, CheckpointRoundTripReproducesScores) {
  const auto dir = std::filesystem::temp_directory_path() / "dfd_ckpt_test";
  std::filesystem::create_directories(dir);
  Detector<double> m(make_spec("CST", 1.0 / 8, 64), 21);
  auto in = random_inputs(m, 2, 3);
  {
    Tape<double> tape;
    m.forward(tape, in, Mode::kTrain);  // moves the running statistics
  }
  m.threshold().values()[0] = 0.031;
  save_checkpoint(m, dir / "m");
  auto loaded = load_detector<double>(dir / "m");
  EXPECT_DOUBLE_EQ(loaded.threshold().item(), 0.031);
  Tape<double> t1, t2;
  auto a = m.forward(t1, in, Mode::kEval);
  auto b = loaded.forward(t2, in, Mode::kEval);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
  EXPECT_THROW(load_detector<double>(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}
