#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "dfd/bench/face_model.hpp"
#include "dfd/mining/mask.hpp"
#include "dfd/mining/segments.hpp"
#include "support/golden_track.hpp"

using namespace dfd;
using namespace dfd::mining;

namespace {

LandmarkFrame face(double x0, double y0, double size, double conf = 0.9) {
  LandmarkFrame f;
  f.points = bench::place_face(x0, y0, size);
  f.confidence.fill(conf);
  return f;
}

// Linear scan over all (start, end) pairs, no cleverness.
std::vector<Segment> brute_force_segments(const std::vector<bool>& ok, const std::vector<std::size_t>& cuts) {
  auto is_cut = [&](std::size_t i) { return std::find(cuts.begin(), cuts.end(), i) != cuts.end(); };
  std::vector<Segment> out;
  for (std::size_t s = 0; s < ok.size(); ++s)
    for (std::size_t e = s; e < ok.size(); ++e) {
      bool all = true;
      for (std::size_t k = s; k <= e; ++k) all = all && ok[k] && (k == s || !is_cut(k));
      if (!all) continue;
      const bool left_max = s == 0 || !ok[s - 1] || is_cut(s);
      const bool right_max = e + 1 == ok.size() || !ok[e + 1] || is_cut(e + 1);
      if (left_max && right_max) out.push_back({s, e});
    }
  std::stable_sort(out.begin(), out.end(), [](const Segment& a, const Segment& b) { return a.length() > b.length(); });
  return out;
}

}  // namespace

TEST(FaceTemplate, BoundingBoxIsExact) {
  const auto pts = bench::place_face(10, 20, 100);
  const Box b = bounding_box(pts);
  EXPECT_NEAR(b.x0, 10, 1e-12);
  EXPECT_NEAR(b.y0, 20, 1e-12);
  EXPECT_NEAR(b.width(), 100, 1e-12);
  EXPECT_NEAR(b.height(), 100, 1e-12);
}

TEST(Metrics, IdenticalFramesHaveZeroDisplacement) {
  LandmarkTrack t;
  t.frames = {face(0, 0, 100), face(0, 0, 100)};
  auto r = compute_metrics(t);
  EXPECT_EQ(r.frames[1].displacement, 0.0);
  EXPECT_DOUBLE_EQ(r.frames[1].face_size, 100.0);
}

TEST(Metrics, ShiftOf3By4OnFace100) {
  LandmarkTrack t;
  t.frames = {face(0, 0, 100), face(3, 4, 100)};
  auto r = compute_metrics(t);
  EXPECT_NEAR(r.frames[1].displacement, 0.05, 1e-12);
  EXPECT_EQ(r.frames[0].displacement, 0.0);
}

TEST(Metrics, ConstantConfidence) {
  LandmarkTrack t;
  t.frames = {face(0, 0, 100, 0.8), face(0, 0, 100, 0.8), face(0, 0, 100, 0.8)};
  auto r = compute_metrics(t);
  EXPECT_NEAR(r.frames[2].confidence, 0.8, 1e-12);
  EXPECT_NEAR(r.stats.std_c, 0.0, 1e-12);
}

TEST(Metrics, MissingFramesAreUnsuitableAndExcluded) {
  LandmarkTrack t;
  t.frames = {face(0, 0, 100, 0.5), std::nullopt, face(50, 0, 100, 1.0)};
  auto r = compute_metrics(t);
  EXPECT_EQ(r.stats.frames, 2u);
  EXPECT_NEAR(r.stats.mean_c, 0.75, 1e-12);
  EXPECT_EQ(r.frames[2].displacement, 0.0);
  EXPECT_FALSE(classify_suitability(r.frames[1], r.stats).suitable());
  EXPECT_THROW(compute_metrics(LandmarkTrack{}), ContractViolation);
}

TEST(Suitability, ExamplesFromTheRules) {
  TrackStatistics s{0.9, 0.2, 0.0, 0.0, 10};
  auto reasons = [&](double c, double d) {
    return classify_suitability(FrameMetrics{true, c, d, 100}, s).reason_numbers();
  };
  EXPECT_EQ(reasons(0.15, 0.0), (std::vector<int>{1, 3}));
  EXPECT_EQ(reasons(0.9, 0.2), (std::vector<int>{2, 4}));
  EXPECT_EQ(reasons(0.59, 0.0), (std::vector<int>{3}));
  EXPECT_EQ(reasons(0.7, 0.01), (std::vector<int>{}));
  // Strict inequalities at the thresholds.
  EXPECT_EQ(reasons(0.2, 0.1), (std::vector<int>{3, 4}));
  TrackStatistics wide{0.1, 0.0, 0.0, 1.0, 10};
  EXPECT_TRUE(classify_suitability(FrameMetrics{true, 0.2, 0.1, 1}, wide).suitable());
}

TEST(Suitability, Idempotent) {
  auto g = dfd::testing::golden_track();
  auto m = compute_metrics(g.track);
  for (const auto& f : m.frames)
    EXPECT_EQ(classify_suitability(f, m.stats).reasons, classify_suitability(f, m.stats).reasons);
}

TEST(Segments, RunExtraction) {
  EXPECT_EQ(extract_segments({true, true, true, false, true, true}, {}), (std::vector<Segment>{{0, 2}, {4, 5}}));
  EXPECT_EQ(extract_segments({true, true, true, true}, {2}), (std::vector<Segment>{{0, 1}, {2, 3}}));
  EXPECT_TRUE(extract_segments({}, {}).empty());
}

TEST(Segments, MatchBruteForceOnRandomPatterns) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rng() % 40;
    std::vector<bool> ok(n);
    for (std::size_t i = 0; i < n; ++i) ok[i] = rng() % 4 != 0;
    std::vector<std::size_t> cuts;
    for (std::size_t i = 1; i < n; ++i)
      if (rng() % 10 == 0) cuts.push_back(i);
    const auto got = extract_segments(ok, cuts);
    EXPECT_EQ(got, brute_force_segments(ok, cuts));
    for (const auto& s : got)
      for (std::size_t k = s.start; k <= s.end; ++k) EXPECT_TRUE(ok[k]);
  }
}

TEST(Selection, GreedyBudget) {
  std::vector<Segment> segs{{0, 3999}, {5000, 6499}, {7000, 7899}};
  auto s = select_training_frames(segs);
  EXPECT_EQ(s.training_frames, 5500u);
  EXPECT_EQ(s.training.size(), 2u);
  EXPECT_EQ(s.test_pool, (std::vector<Segment>{{7000, 7899}}));
  EXPECT_FALSE(s.shortfall);

  auto single = select_training_frames({{0, 5199}});
  EXPECT_EQ(single.training_frames, 5200u);

  auto shortfall = select_training_frames({{0, 2999}, {4000, 4999}});
  EXPECT_EQ(shortfall.training_frames, 4000u);
  EXPECT_TRUE(shortfall.shortfall);
  EXPECT_TRUE(shortfall.test_pool.empty());

  EXPECT_THROW(select_training_frames({{0, 1}, {3, 9}}), ContractViolation);
}

TEST(Selection, TrainingAndTestDisjoint) {
  auto g = dfd::testing::golden_track();
  auto r = mine_track(g.track, g.cuts, g.budget);
  std::vector<int> owner(200, 0);
  for (const auto& s : r.selection.training)
    for (auto k = s.start; k <= s.end; ++k) owner[k] += 1;
  for (const auto& s : r.selection.test_pool)
    for (auto k = s.start; k <= s.end; ++k) owner[k] += 1;
  for (int o : owner) EXPECT_LE(o, 1);
}

TEST(Golden, TwoHundredFrameTrack) {
  auto g = dfd::testing::golden_track();
  auto r = mine_track(g.track, g.cuts, g.budget);
  EXPECT_NEAR(r.metrics.stats.mean_c, 0.894, 1e-12);
  EXPECT_NEAR(r.metrics.stats.std_c, std::sqrt(0.003964), 1e-12);
  EXPECT_NEAR(r.metrics.stats.mean_d, 0.00125, 1e-12);
  EXPECT_NEAR(r.metrics.stats.std_d, std::sqrt(0.0002109375), 1e-12);
  for (std::size_t i = 0; i < 200; ++i) EXPECT_EQ(r.labels[i].reason_numbers(), g.expected_reasons[i]) << i;
  EXPECT_EQ(r.segments, g.expected_segments);
  EXPECT_EQ(r.selection.training, g.expected_training);
  EXPECT_EQ(r.selection.test_pool, g.expected_test);
  EXPECT_EQ(r.selection.training_frames, 117u);
}

TEST(TrackFile, RoundTripAndErrors) {
  auto g = dfd::testing::golden_track();
  g.track.frames[5].reset();
  std::stringstream ss;
  write_track(ss, g.track);
  auto back = read_track(ss);
  ASSERT_EQ(back.size(), 200u);
  EXPECT_EQ(back.frame_width, 400u);
  EXPECT_FALSE(back.frames[5].has_value());
  EXPECT_NEAR(back.frames[150]->points[7].x, g.track.frames[150]->points[7].x, 1e-8);
  std::stringstream bad("0 1 2 3\n");
  EXPECT_THROW(read_track(bad), IoError);
  std::stringstream order("1\n");
  EXPECT_THROW(read_track(order), IoError);
}

TEST(Hull, SquareMaskIsExactlyTheSquare) {
  Image img(20, 20, 1.0f);
  std::array<Point, kLandmarkCount> pts{};
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const double t = static_cast<double>(i % 4);
    pts[i] = {t < 2 ? 5.0 : 12.0, (t == 0 || t == 3) ? 4.0 : 10.0};
  }
  auto m = mask_outside_hull(img, pts);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x) {
      const bool in = x >= 5 && x <= 12 && y >= 4 && y <= 10;
      EXPECT_EQ(m.at(y, x, 0), in ? 1.0f : 0.0f) << x << "," << y;
    }
}

TEST(Hull, CollinearLandmarksRejected) {
  Image img(20, 20, 1.0f);
  LandmarkFrame f;
  for (std::size_t i = 0; i < kLandmarkCount; ++i) f.points[i] = {1.0 + 0.2 * i, 1.0 + 0.2 * i};
  EXPECT_THROW(mask_and_crop(img, f), ContractViolation);
}

TEST(Hull, HullOfTemplateContainsAllLandmarks) {
  const auto pts = bench::place_face(0, 0, 50);
  const auto hull = convex_hull(pts);
  EXPECT_GT(polygon_area(hull), 0);
  for (const auto& p : pts) EXPECT_TRUE(inside_hull(hull, p));
}

TEST(MaskAndCrop, CenteredOnTheFace) {
  // Uniform frame; after masking, the lit region's centroid in the 256 crop
  // must sit on the crop center since the face box is centered.
  Image img(300, 300, 1.0f);
  LandmarkFrame f = face(80, 60, 120);
  auto out = mask_and_crop(img, f);
  ASSERT_EQ(out.width, 256u);
  const double side = 120 * 1.3;
  const double step = side / 256;
  // The box center (140, 120) maps to the output point (128, 128) in pixel
  // coordinates measured from the crop corner, to within one output pixel.
  const double u = (140 - (140 - side / 2)) / step - 0.5;
  EXPECT_NEAR(u, 127.5, 1.0);
  // Lit pixels never leave the face box.
  const double scale = 256 / side;
  for (std::size_t y = 0; y < 256; ++y)
    for (std::size_t x = 0; x < 256; ++x)
      if (out.at(y, x, 0) > 0) {
        EXPECT_GE(x + 1, static_cast<std::size_t>((side - 120) / 2 * scale) - 1);
        EXPECT_LE(x, static_cast<std::size_t>((side + 120) / 2 * scale) + 1);
      }
  // Horizontal extent of the lit area is symmetric about the crop center.
  std::size_t lo = 256, hi = 0;
  for (std::size_t x = 0; x < 256; ++x)
    if (out.at(128, x, 0) > 0) lo = std::min(lo, x), hi = std::max(hi, x);
  EXPECT_NEAR((static_cast<double>(lo) + static_cast<double>(hi)) / 2, 127.5, 1.0);
}

TEST(SceneCuts, HistogramDetector) {
  FrameSequence v;
  for (int i = 0; i < 10; ++i) v.frames.emplace_back(16, 16, i < 6 ? 0.2f : 0.8f);
  EXPECT_EQ(detect_scene_cuts(v), (std::vector<std::size_t>{6}));
  EXPECT_NEAR(luma_histogram(v.frames[0])[12], 1.0, 1e-12);
}
