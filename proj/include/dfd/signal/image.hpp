#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "dfd/core/error.hpp"

namespace dfd {

// Interleaved RGB frame, row-major, values nominally in [0,1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;  // height * width * 3

  Image() = default;
  Image(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool empty() const { return pixels.empty(); }
  bool same_size(const Image& other) const { return width == other.width && height == other.height; }

  static float from_8bit(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }
  static std::uint8_t to_8bit(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  }
};

// Ordered video frames sharing one size, with their frame rate.
struct FrameSequence {
  double fps = 25.0;
  std::vector<Image> frames;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
};

// Bilinear sample at continuous coordinates where pixel centers sit on
// integers. Samples outside the image read as 0.
inline float sample_bilinear(const Image& img, double x, double y, std::size_t c) {
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  auto px = [&](long yy, long xx) -> double {
    if (xx < 0 || yy < 0 || xx >= static_cast<long>(img.width) || yy >= static_cast<long>(img.height)) return 0.0;
    return img.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
  };
  const double top = (1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1);
  const double bottom = (1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1);
  return static_cast<float>((1 - ay) * top + ay * bottom);
}

// Bilinear rescale to an explicit size, edges clamped.
inline Image resize_bilinear(const Image& src, std::size_t width, std::size_t height) {
  require(!src.empty() && width > 0 && height > 0, "resize_bilinear: empty image or target");
  Image out(width, height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = sample_bilinear(src, fx, fy, c);
    }
  }
  return out;
}

// Square crop of side `side` centered at (cx, cy), resampled to out_size.
// (cx, cy) uses the same pixel-centers-on-integers convention as
// sample_bilinear, so the output's geometric center maps exactly to it.
inline Image crop_square(const Image& src, double cx, double cy, double side, std::size_t out_size) {
  require(side > 0 && out_size > 0, "crop_square: side and output size must be positive");
  Image out(out_size, out_size);
  const double step = side / static_cast<double>(out_size);
  const double x0 = cx - side / 2.0, y0 = cy - side / 2.0;
  for (std::size_t v = 0; v < out_size; ++v)
    for (std::size_t u = 0; u < out_size; ++u) {
      const double x = x0 + (static_cast<double>(u) + 0.5) * step;
      const double y = y0 + (static_cast<double>(v) + 0.5) * step;
      for (std::size_t c = 0; c < 3; ++c) out.at(v, u, c) = sample_bilinear(src, x, y, c);
    }
  return out;
}

inline double mean_squared_error(const Image& a, const Image& b) {
  require(a.same_size(b), "mean_squared_error: size mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    acc += d * d;
  }
  return a.pixels.empty() ? 0.0 : acc / static_cast<double>(a.pixels.size());
}

}  // namespace dfd
