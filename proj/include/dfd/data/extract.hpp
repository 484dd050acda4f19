#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/signal/image.hpp"

namespace dfd::data {

// Square face box: center and side, pixel-center coordinates.
struct CropBox {
  double cx = 0, cy = 0, side = 0;
};

using BoxTrack = std::vector<std::optional<CropBox>>;

struct ExtractConfig {
  double target_fps = 25.0;
  std::size_t smoothing_window = 11;
  std::size_t output_size = 299;
};

inline std::size_t resampled_count(std::size_t n, double fps, double target_fps) {
  if (n == 0) return 0;
  return static_cast<std::size_t>(std::floor(static_cast<double>(n - 1) * target_fps / fps + 1e-9)) + 1;
}

/**
 * Linear-in-time resampling to target_fps. Output frame k sits at input
 * position k * fps / target_fps; boxes are interpolated the same way and are
 * missing whenever a contributing neighbour is missing.
 */
inline std::pair<FrameSequence, BoxTrack> resample(const FrameSequence& video, const BoxTrack& boxes,
                                                   double target_fps) {
  require(video.fps > 0 && target_fps > 0, "resample: frame rates must be positive");
  require(boxes.empty() || boxes.size() == video.size(), "resample: box track length differs from video");
  const std::size_t n = resampled_count(video.size(), video.fps, target_fps);
  FrameSequence out;
  out.fps = target_fps;
  BoxTrack out_boxes;
  for (std::size_t k = 0; k < n; ++k) {
    const double pos = static_cast<double>(k) * video.fps / target_fps;
    const std::size_t i0 = std::min(video.size() - 1, static_cast<std::size_t>(std::floor(pos + 1e-9)));
    const std::size_t i1 = std::min(video.size() - 1, i0 + 1);
    double w = std::clamp(pos - static_cast<double>(i0), 0.0, 1.0);
    if (w < 1e-9) w = 0;
    const Image& a = video.frames[i0];
    if (w == 0) {
      out.frames.push_back(a);
    } else {
      const Image& b = video.frames[i1];
      Image f(a.width, a.height);
      for (std::size_t p = 0; p < f.pixels.size(); ++p)
        f.pixels[p] = static_cast<float>((1 - w) * a.pixels[p] + w * b.pixels[p]);
      out.frames.push_back(std::move(f));
    }
    if (boxes.empty()) continue;
    if (w == 0) {
      out_boxes.push_back(boxes[i0]);
    } else if (boxes[i0] && boxes[i1]) {
      const auto &a0 = *boxes[i0], &b0 = *boxes[i1];
      out_boxes.push_back(CropBox{(1 - w) * a0.cx + w * b0.cx, (1 - w) * a0.cy + w * b0.cy,
                                  (1 - w) * a0.side + w * b0.side});
    } else {
      out_boxes.emplace_back();
    }
  }
  return {std::move(out), std::move(out_boxes)};
}

// Centered moving average over the boxes present in each window (the window
// shrinks at the ends and around gaps); missing boxes stay missing.
inline BoxTrack smooth_boxes(const BoxTrack& boxes, std::size_t window) {
  require(window % 2 == 1, "smooth_boxes: window must be odd");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(boxes.size());
  BoxTrack out(boxes.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (!boxes[static_cast<std::size_t>(i)]) continue;
    CropBox acc{};
    double count = 0;
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, i - half); k <= std::min(n - 1, i + half); ++k) {
      const auto& b = boxes[static_cast<std::size_t>(k)];
      if (!b) continue;
      acc.cx += b->cx;
      acc.cy += b->cy;
      acc.side += b->side;
      count += 1;
    }
    out[static_cast<std::size_t>(i)] = CropBox{acc.cx / count, acc.cy / count, acc.side / count};
  }
  return out;
}

struct ExtractedFrames {
  FrameSequence crops;
  std::vector<std::size_t> source_index;  // index into the 25fps sequence
  std::vector<std::size_t> omitted;
  double crop_side = 0;
};

/**
 * Face crops for the detector: 25fps resampling, box smoothing, one constant
 * crop side per sequence (the largest smoothed side), bilinear scaling to
 * output_size. Frames without a box are omitted.
 */
inline ExtractedFrames extract_detector_frames(const FrameSequence& video, const BoxTrack& boxes,
                                               const ExtractConfig& cfg = {}) {
  ExtractedFrames out;
  out.crops.fps = cfg.target_fps;
  if (video.empty()) return out;
  auto [v25, b25] = resample(video, boxes, cfg.target_fps);
  const BoxTrack smooth = smooth_boxes(b25, cfg.smoothing_window);
  for (const auto& b : smooth)
    if (b) out.crop_side = std::max(out.crop_side, b->side);
  if (out.crop_side <= 0) {
    log().warn("extract_detector_frames: no face boxes in sequence, nothing extracted");
    for (std::size_t i = 0; i < v25.size(); ++i) out.omitted.push_back(i);
    return out;
  }
  for (std::size_t i = 0; i < v25.size(); ++i) {
    if (!smooth[i]) {
      out.omitted.push_back(i);
      continue;
    }
    out.crops.frames.push_back(crop_square(v25.frames[i], smooth[i]->cx, smooth[i]->cy, out.crop_side, cfg.output_size));
    out.source_index.push_back(i);
  }
  if (!out.omitted.empty()) log().info("extract_detector_frames: omitted {} frames without a face box", out.omitted.size());
  return out;
}

inline double average_side(const BoxTrack& boxes) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& b : boxes)
    if (b) sum += b->side, ++n;
  return n ? sum / static_cast<double>(n) : 0.0;
}

struct NormalizedVideo {
  FrameSequence video;
  BoxTrack boxes;
  double scale = 1.0;  // applied width ratio
};

/**
 * Rescales the whole video so that the time-averaged face crop side becomes
 * target_side. Boxes are mapped into the new pixel grid.
 */
inline NormalizedVideo normalize_resolution(const FrameSequence& video, const BoxTrack& boxes,
                                            double target_side = 258) {
  require(!video.empty(), "normalize_resolution: empty video");
  require(boxes.size() == video.size(), "normalize_resolution: box track length differs from video");
  const double mean_side = average_side(boxes);
  require(mean_side > 0, "normalize_resolution: average crop side is zero");
  const double factor = target_side / mean_side;
  const Image& f0 = video.frames.front();
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(f0.width) * factor)));
  const auto h =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(f0.height) * factor)));
  NormalizedVideo out;
  out.video.fps = video.fps;
  out.scale = static_cast<double>(w) / static_cast<double>(f0.width);
  const double sy = static_cast<double>(h) / static_cast<double>(f0.height);
  for (const auto& f : video.frames)
    out.video.frames.push_back(w == f.width && h == f.height ? f : resize_bilinear(f, w, h));
  // Pixel centers map as x' = (x + 0.5) * s - 0.5.
  for (const auto& b : boxes) {
    if (!b) {
      out.boxes.emplace_back();
      continue;
    }
    out.boxes.push_back(CropBox{(b->cx + 0.5) * out.scale - 0.5, (b->cy + 0.5) * sy - 0.5, b->side * out.scale});
  }
  return out;
}

}  // namespace dfd::data
