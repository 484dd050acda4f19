#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "dfd/mining/landmarks.hpp"

namespace dfd::bench {

using mining::kLandmarkCount;
using mining::Point;

// 66-point layout in the unit square (bounding box exactly [0,1]^2):
// 17 jaw, 10 brow, 9 nose, 12 eye, 18 mouth points.
inline const std::array<Point, kLandmarkCount>& unit_face_template() {
  static const std::array<Point, kLandmarkCount> pts = [] {
    std::array<Point, kLandmarkCount> p{};
    constexpr double pi = std::numbers::pi;
    std::size_t k = 0;
    for (int i = 0; i < 17; ++i) {
      const double phi = pi - pi * i / 16.0;
      p[k++] = {0.5 + 0.5 * std::cos(phi), 0.35 + 0.65 * std::sin(phi)};
    }
    for (double x0 : {0.12, 0.58})
      for (int i = 0; i < 5; ++i) p[k++] = {x0 + 0.075 * i, 0.05 * (1 - std::sin(pi * i / 4.0))};
    for (int i = 0; i < 4; ++i) p[k++] = {0.5, 0.25 + 0.08 * i};
    for (int i = 0; i < 5; ++i) p[k++] = {0.4 + 0.05 * i, 0.58};
    for (double cx : {0.3, 0.7})
      for (int i = 0; i < 6; ++i) p[k++] = {cx + 0.08 * std::cos(pi * i / 3.0), 0.3 + 0.04 * std::sin(pi * i / 3.0)};
    for (int i = 0; i < 12; ++i)
      p[k++] = {0.5 + 0.18 * std::cos(pi * i / 6.0), 0.78 + 0.08 * std::sin(pi * i / 6.0)};
    for (int i = 0; i < 6; ++i) p[k++] = {0.5 + 0.1 * std::cos(pi * i / 3.0), 0.78 + 0.03 * std::sin(pi * i / 3.0)};
    return p;
  }();
  return pts;
}

// Template placed with its bounding box at (x0, y0) and side `size`.
inline std::array<Point, kLandmarkCount> place_face(double x0, double y0, double size) {
  std::array<Point, kLandmarkCount> out{};
  const auto& t = unit_face_template();
  for (std::size_t i = 0; i < kLandmarkCount; ++i) out[i] = {x0 + t[i].x * size, y0 + t[i].y * size};
  return out;
}

}  // namespace dfd::bench
