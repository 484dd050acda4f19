#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/mining/landmarks.hpp"
#include "dfd/signal/image.hpp"

namespace dfd::mining {

struct FrameMetrics {
  bool tracked = false;
  double confidence = 0;   // c_i
  double displacement = 0; // d_i
  double face_size = 0;
};

struct TrackStatistics {
  double mean_c = 0, std_c = 0;
  double mean_d = 0, std_d = 0;
  std::size_t frames = 0;
};

struct MetricsResult {
  std::vector<FrameMetrics> frames;
  TrackStatistics stats;
};

inline double face_size(const LandmarkFrame& f) {
  const Box b = bounding_box(f.points);
  return (b.width() + b.height()) / 2;
}

/**
 * c_i, d_i and face size per frame plus population statistics over tracked
 * frames. d_i is the mean Euclidean landmark shift from frame i-1 divided by
 * frame i's face size; it is 0 when frame i-1 is missing or i = 0.
 */
inline MetricsResult compute_metrics(const LandmarkTrack& track) {
  require(!track.frames.empty(), "compute_metrics: empty landmark track");
  MetricsResult r;
  r.frames.resize(track.size());
  std::vector<double> cs, ds;
  for (std::size_t i = 0; i < track.size(); ++i) {
    const auto& f = track.frames[i];
    if (!f) continue;
    FrameMetrics& m = r.frames[i];
    m.tracked = true;
    m.confidence = std::accumulate(f->confidence.begin(), f->confidence.end(), 0.0) / kLandmarkCount;
    m.face_size = face_size(*f);
    if (i > 0 && track.frames[i - 1]) {
      double shift = 0;
      for (std::size_t k = 0; k < kLandmarkCount; ++k)
        shift += std::hypot(f->points[k].x - track.frames[i - 1]->points[k].x,
                            f->points[k].y - track.frames[i - 1]->points[k].y);
      shift /= kLandmarkCount;
      require(m.face_size > 0, "compute_metrics: frame " + std::to_string(i) + " has a zero-size face");
      m.displacement = shift / m.face_size;
    }
    cs.push_back(m.confidence);
    ds.push_back(m.displacement);
  }
  auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    if (v.empty()) return;
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double acc = 0;
    for (double x : v) acc += (x - mean) * (x - mean);
    sd = std::sqrt(acc / static_cast<double>(v.size()));
  };
  mean_std(cs, r.stats.mean_c, r.stats.std_c);
  mean_std(ds, r.stats.mean_d, r.stats.std_d);
  r.stats.frames = cs.size();
  return r;
}

enum Reason : unsigned {
  kLowConfidence = 1u << 0,       // c_i < 0.2
  kLargeMotion = 1u << 1,         // d_i > 0.1
  kConfidenceOutlier = 1u << 2,   // c_i < 0.6 and below mean - 1.1 sd
  kMotionOutlier = 1u << 3,       // d_i > 0.025 and above mean + 1.1 sd
  kUntracked = 1u << 4,
};

struct Suitability {
  unsigned reasons = 0;
  bool suitable() const { return reasons == 0; }

  // Numbered reasons 1-4; an untracked frame reports 0.
  std::vector<int> reason_numbers() const {
    std::vector<int> out;
    if (reasons & kUntracked) out.push_back(0);
    for (int k = 0; k < 4; ++k)
      if (reasons & (1u << k)) out.push_back(k + 1);
    return out;
  }
};

inline Suitability classify_suitability(const FrameMetrics& m, const TrackStatistics& s) {
  Suitability r;
  if (!m.tracked) {
    r.reasons = kUntracked;
    return r;
  }
  if (m.confidence < 0.2) r.reasons |= kLowConfidence;
  if (m.displacement > 0.1) r.reasons |= kLargeMotion;
  if (m.confidence < 0.6 && m.confidence < s.mean_c - 1.1 * s.std_c) r.reasons |= kConfidenceOutlier;
  if (m.displacement > 0.025 && m.displacement > s.mean_d + 1.1 * s.std_d) r.reasons |= kMotionOutlier;
  return r;
}

struct Segment {
  std::size_t start = 0, end = 0;  // inclusive
  std::size_t length() const { return end - start + 1; }
  bool operator==(const Segment&) const = default;
};

/**
 * Maximal runs of suitable frames. A cut at index c separates frame c-1 from
 * frame c. Sorted by length descending, ties by start.
 */
inline std::vector<Segment> extract_segments(const std::vector<bool>& suitable, const std::vector<std::size_t>& cuts) {
  std::vector<bool> cut_before(suitable.size() + 1, false);
  for (std::size_t c : cuts)
    if (c < cut_before.size()) cut_before[c] = true;
  std::vector<Segment> out;
  std::optional<std::size_t> open;
  for (std::size_t i = 0; i <= suitable.size(); ++i) {
    const bool ok = i < suitable.size() && suitable[i];
    if (open && (!ok || cut_before[i])) {
      out.push_back({*open, i - 1});
      open.reset();
    }
    if (ok && !open) open = i;
  }
  std::stable_sort(out.begin(), out.end(), [](const Segment& a, const Segment& b) { return a.length() > b.length(); });
  return out;
}

struct FrameBudget {
  std::size_t lo = 5000, hi = 6000;
};

struct Selection {
  std::vector<Segment> training;
  std::vector<Segment> test_pool;
  std::size_t training_frames = 0;
  bool shortfall = false;
};

/**
 * Greedy pick from segments sorted by length: take each segment that keeps the
 * total at or below hi, stop once the total reaches lo. Segments not taken
 * form the test pool. Falling short of lo logs a warning.
 */
inline Selection select_training_frames(const std::vector<Segment>& segments, FrameBudget budget = {}) {
  require(budget.lo <= budget.hi, "select_training_frames: budget lo > hi");
  for (std::size_t i = 1; i < segments.size(); ++i)
    require(segments[i - 1].length() >= segments[i].length(), "select_training_frames: segments not sorted by length");
  Selection s;
  for (const auto& seg : segments) {
    if (s.training_frames < budget.lo && s.training_frames + seg.length() <= budget.hi) {
      s.training.push_back(seg);
      s.training_frames += seg.length();
    } else {
      s.test_pool.push_back(seg);
    }
  }
  if (s.training_frames < budget.lo) {
    s.shortfall = true;
    log().warn("select_training_frames: only {} training frames available, budget asks for {}..{}",
               s.training_frames, budget.lo, budget.hi);
  }
  return s;
}

// 64-bin histogram of Rec.601 luma, normalized to unit mass.
inline std::vector<double> luma_histogram(const Image& img, std::size_t bins = 64) {
  std::vector<double> h(bins, 0.0);
  const std::size_t n = img.width * img.height;
  for (std::size_t p = 0; p < n; ++p) {
    const float* px = &img.pixels[3 * p];
    const double y = std::clamp(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2], 0.0, 1.0);
    h[std::min(bins - 1, static_cast<std::size_t>(y * static_cast<double>(bins)))] += 1.0;
  }
  for (auto& v : h) v /= static_cast<double>(std::max<std::size_t>(n, 1));
  return h;
}

// Reference cut detector: frame i starts a new shot when the L1 distance of
// consecutive luma histograms exceeds the threshold.
inline std::vector<std::size_t> detect_scene_cuts(const FrameSequence& video, double threshold = 0.5) {
  std::vector<std::size_t> cuts;
  std::vector<double> prev;
  for (std::size_t i = 0; i < video.size(); ++i) {
    auto h = luma_histogram(video.frames[i]);
    if (i > 0) {
      double l1 = 0;
      for (std::size_t b = 0; b < h.size(); ++b) l1 += std::abs(h[b] - prev[b]);
      if (l1 > threshold) cuts.push_back(i);
    }
    prev = std::move(h);
  }
  return cuts;
}

struct MiningReport {
  MetricsResult metrics;
  std::vector<Suitability> labels;
  std::vector<std::size_t> scene_cuts;
  std::vector<Segment> segments;
  Selection selection;
};

inline MiningReport mine_track(const LandmarkTrack& track, const std::vector<std::size_t>& cuts,
                               FrameBudget budget = {}) {
  MiningReport r;
  r.metrics = compute_metrics(track);
  r.scene_cuts = cuts;
  std::vector<bool> ok;
  for (const auto& m : r.metrics.frames) {
    r.labels.push_back(classify_suitability(m, r.metrics.stats));
    ok.push_back(r.labels.back().suitable());
  }
  r.segments = extract_segments(ok, cuts);
  r.selection = select_training_frames(r.segments, budget);
  return r;
}

inline nlohmann::json to_json(const MiningReport& r) {
  using nlohmann::json;
  auto segs = [](const std::vector<Segment>& v) {
    json a = json::array();
    for (const auto& s : v) a.push_back({{"start", s.start}, {"end", s.end}, {"length", s.length()}});
    return a;
  };
  json frames = json::array();
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    const auto& m = r.metrics.frames[i];
    frames.push_back({{"frame", i},
                      {"tracked", m.tracked},
                      {"c", m.confidence},
                      {"d", m.displacement},
                      {"face_size", m.face_size},
                      {"reasons", r.labels[i].reason_numbers()}});
  }
  const auto& s = r.metrics.stats;
  return json{{"statistics", {{"mean_c", s.mean_c}, {"std_c", s.std_c}, {"mean_d", s.mean_d}, {"std_d", s.std_d}}},
              {"scene_cuts", r.scene_cuts},
              {"segments", segs(r.segments)},
              {"training", segs(r.selection.training)},
              {"training_frames", r.selection.training_frames},
              {"shortfall", r.selection.shortfall},
              {"test_pool", segs(r.selection.test_pool)},
              {"frames", frames}};
}

}  // namespace dfd::mining
