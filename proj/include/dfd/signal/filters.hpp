#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/signal/image.hpp"
#include "dfd/tensor/tensor.hpp"

namespace dfd::signal {

struct SpatialHighpassConfig {
  std::size_t kernel_size = 5;
  double sigma = 1.1;
};

// Sampled 1-D Gaussian normalized to unit sum.
inline std::vector<double> gaussian_kernel_1d(std::size_t size, double sigma) {
  require(size % 2 == 1, "gaussian_kernel: size must be odd, got " + std::to_string(size));
  require(sigma > 0, "gaussian_kernel: sigma must be positive");
  const double half = static_cast<double>(size / 2);
  std::vector<double> k(size);
  double total = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - half;
    k[i] = std::exp(-d * d / (2 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

// size x size separable Gaussian (outer product of the 1-D kernel), sums to 1.
inline Tensor<double> gaussian_kernel(std::size_t size, double sigma) {
  const auto k = gaussian_kernel_1d(size, sigma);
  Tensor<double> out(Shape{size, size});
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) out.values()[y * size + x] = k[y] * k[x];
  return out;
}

// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …),
// periodic for offsets larger than the signal.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n - 1);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

/**
 * Separable correlation of every H x W plane of `planes` (shape [..., H, W])
 * with the 1-D kernel along both axes, reflect-padded.
 */
template <typename S>
Tensor<S> blur_planes(const Tensor<S>& planes, const std::vector<double>& kernel) {
  require(planes.rank() >= 2, "blur_planes: need at least [H,W]");
  const std::size_t h = planes.dim(planes.rank() - 2), w = planes.dim(planes.rank() - 1);
  const std::size_t count = planes.numel() / (h * w);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  Tensor<S> out(planes.shape());
  std::vector<double> tmp(h * w);
  std::vector<std::size_t> xi(w * kernel.size()), yi(h * kernel.size());
  for (std::size_t x = 0; x < w; ++x)
    for (std::size_t k = 0; k < kernel.size(); ++k)
      xi[x * kernel.size() + k] = reflect_index(static_cast<std::ptrdiff_t>(x + k) - half, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t k = 0; k < kernel.size(); ++k)
      yi[y * kernel.size() + k] = reflect_index(static_cast<std::ptrdiff_t>(y + k) - half, h);
  for (std::size_t p = 0; p < count; ++p) {
    const S* src = planes.data() + p * h * w;
    S* dst = out.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < kernel.size(); ++k) acc += kernel[k] * src[y * w + xi[x * kernel.size() + k]];
        tmp[y * w + x] = acc;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < kernel.size(); ++k) acc += kernel[k] * tmp[yi[y * kernel.size() + k] * w + x];
        dst[y * w + x] = static_cast<S>(acc);
      }
  }
  return out;
}

/**
 * Converts an RGB frame into a [3,H,W] network input. Values are used as-is
 * (the [0,1] range carries mean 1/2 by convention); anything outside [0,1]
 * is clamped with a warning.
 */
template <typename S>
Tensor<S> normalize_color(const Image& frame) {
  Tensor<S> out(Shape{3, frame.height, frame.width});
  std::size_t clamped = 0;
  auto ov = out.values();
  for (std::size_t y = 0; y < frame.height; ++y)
    for (std::size_t x = 0; x < frame.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        float v = frame.at(y, x, c);
        if (!(v >= 0.0f && v <= 1.0f)) {
          ++clamped;
          v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
        }
        ov[(c * frame.height + y) * frame.width + x] = static_cast<S>(v);
      }
  if (clamped > 0) log().warn("normalize_color: clamped {} out-of-range values to [0,1]", clamped);
  return out;
}

template <typename S>
Image to_image(const Tensor<S>& chw) {
  require(chw.rank() == 3 && chw.dim(0) == 3, "to_image: expected [3,H,W]");
  const std::size_t h = chw.dim(1), w = chw.dim(2);
  Image img(w, h);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.at(y, x, c) = static_cast<float>(chw.values()[(c * h + y) * w + x]);
  return img;
}

/**
 * Spatial noise input: 1/2 * (F - g * F) + 1/2 per channel, where g is the
 * configured Gaussian and the blur is reflect-padded. Accepts any [..., H, W]
 * tensor.
 */
template <typename S>
Tensor<S> spatial_highpass(const Tensor<S>& frame, const SpatialHighpassConfig& cfg = {}) {
  const auto kernel = gaussian_kernel_1d(cfg.kernel_size, cfg.sigma);
  Tensor<S> blurred = blur_planes(frame, kernel);
  auto bv = blurred.values();
  auto fv = frame.values();
  for (std::size_t i = 0; i < bv.size(); ++i) bv[i] = S(0.5) * (fv[i] - bv[i]) + S(0.5);
  return blurred;
}

}  // namespace dfd::signal
