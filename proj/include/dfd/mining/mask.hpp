#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/mining/landmarks.hpp"
#include "dfd/signal/image.hpp"

namespace dfd::mining {

inline double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain; counter-clockwise, no repeated or collinear points.
inline std::vector<Point> convex_hull(std::span<const Point> pts) {
  std::vector<Point> p(pts.begin(), pts.end());
  std::sort(p.begin(), p.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (p.size() < 3) return p;
  std::vector<Point> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  return h;
}

inline double polygon_area(const std::vector<Point>& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return a / 2;
}

// Inclusive point-in-convex-polygon test for a counter-clockwise hull.
inline bool inside_hull(const std::vector<Point>& hull, const Point& q) {
  for (std::size_t i = 0; i < hull.size(); ++i)
    if (cross(hull[i], hull[(i + 1) % hull.size()], q) < -1e-9) return false;
  return true;
}

// Zeroes every pixel whose center lies outside the landmark hull.
inline Image mask_outside_hull(const Image& frame, std::span<const Point> landmarks) {
  const auto hull = convex_hull(landmarks);
  require(hull.size() >= 3 && polygon_area(hull) > 1e-6, "mask: landmarks are degenerate (collinear)");
  Image out = frame;
  const Box b = bounding_box(hull);
  for (std::size_t y = 0; y < frame.height; ++y)
    for (std::size_t x = 0; x < frame.width; ++x) {
      const Point q{static_cast<double>(x), static_cast<double>(y)};
      const bool in = q.x >= b.x0 && q.x <= b.x1 && q.y >= b.y0 && q.y <= b.y1 && inside_hull(hull, q);
      if (!in)
        for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = 0.0f;
    }
  return out;
}

struct MaskCropConfig {
  double margin = 1.3;
  std::size_t output_size = 256;
};

// Square crop around the landmark box center, side = margin * longer box side.
inline Box face_crop_box(std::span<const Point> landmarks, double margin) {
  const Box b = bounding_box(landmarks);
  const double side = std::max(b.width(), b.height()) * margin;
  return {b.cx() - side / 2, b.cy() - side / 2, b.cx() + side / 2, b.cy() + side / 2};
}

inline Image mask_and_crop(const Image& frame, const LandmarkFrame& lm, const MaskCropConfig& cfg = {}) {
  std::span<const Point> pts(lm.points);
  for (const auto& p : pts)
    require(p.x >= 0 && p.y >= 0 && p.x <= static_cast<double>(frame.width - 1) &&
                p.y <= static_cast<double>(frame.height - 1),
            "mask_and_crop: landmark outside the frame");
  const Image masked = mask_outside_hull(frame, pts);
  const Box crop = face_crop_box(pts, cfg.margin);
  return crop_square(masked, crop.cx(), crop.cy(), crop.width(), cfg.output_size);
}

}  // namespace dfd::mining
