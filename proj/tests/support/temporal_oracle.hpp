#pragma once

// Independent scalar transcription of the six temporal-noise formulas. It
// uses a full 2-D kernel (not the separable path) and its own mirror
// padding, and evaluates everything per pixel with plain loops.

#include <cmath>
#include <cstddef>
#include <vector>

#include "dfd/tensor/tensor.hpp"

namespace dfd::testing {

inline long mirror(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

inline std::vector<double> direct_gaussian_blur(const Tensor<double>& frame, int size, double sigma) {
  const long c = static_cast<long>(frame.dim(0)), h = static_cast<long>(frame.dim(1)), w = static_cast<long>(frame.dim(2));
  const int half = size / 2;
  std::vector<double> kernel(static_cast<std::size_t>(size * size));
  double z = 0;
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      kernel[static_cast<std::size_t>((dy + half) * size + dx + half)] = v;
      z += v;
    }
  std::vector<double> out(frame.numel());
  for (long ch = 0; ch < c; ++ch)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = 0;
        for (int dy = -half; dy <= half; ++dy)
          for (int dx = -half; dx <= half; ++dx)
            acc += kernel[static_cast<std::size_t>((dy + half) * size + dx + half)] / z *
                   frame.values()[static_cast<std::size_t>((ch * h + mirror(y + dy, h)) * w + mirror(x + dx, w))];
        out[static_cast<std::size_t>((ch * h + y) * w + x)] = acc;
      }
  return out;
}

inline double thr(double f, double t) {
  const double ff = 10.0 / t;
  const double x = ff * (f - t);
  const double softplus = x > 30 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return (softplus + 10.0 / (1.0 + std::exp(-x))) / ff;
}

// T_i for frame i of `clip`, normalizing over the single window.
inline std::vector<double> transcribed_temporal_noise(const std::vector<Tensor<double>>& clip, std::size_t i,
                                                      double t, double eps, bool thresholded) {
  // step 1 on F_{i-4} .. F_{i+3}
  std::vector<std::vector<double>> low;
  for (std::size_t k = i - 4; k <= i + 3; ++k) low.push_back(direct_gaussian_blur(clip[k], 49, 7.7));
  const std::size_t n = low[0].size();
  // step 2: A_j for j = i-3 .. i+2 (low index j - (i-4))
  std::vector<std::vector<double>> a(6, std::vector<double>(n));
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t p = 0; p < n; ++p)
      a[j][p] = -0.25 * low[j][p] + 0.5 * low[j + 1][p] + -0.25 * low[j + 2][p];
  // step 3: to [0,1] with mean 1/2
  double mu = 0;
  for (auto& plane : a)
    for (double v : plane) mu += v;
  mu /= 6.0 * static_cast<double>(n);
  double peak = 0;
  for (auto& plane : a)
    for (double v : plane) peak = std::max(peak, std::abs(v - mu));
  for (auto& plane : a)
    for (double& v : plane) v = 0.5 + (v - mu) / (2 * peak + eps);
  // step 4 on the signed signal, re-centered
  std::vector<std::vector<double>> ap = a;
  for (auto& plane : ap)
    for (double& v : plane) {
      const double s = v - 0.5;
      v = thresholded ? 0.5 + (thr(s, t) - thr(-s, t)) : v;
    }
  // step 5: G_j for j = i-2 .. i+2
  std::vector<std::vector<double>> g(5, std::vector<double>(n));
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t p = 0; p < n; ++p) g[j][p] = std::abs(ap[j + 1][p] - ap[j][p]);
  // step 6
  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p)
    out[p] = (1.0 / 32) * g[0][p] + (1.0 / 8) * g[1][p] + (3.0 / 16) * g[2][p] + (1.0 / 8) * g[3][p] +
             (1.0 / 32) * g[4][p];
  return out;
}

}  // namespace dfd::testing
