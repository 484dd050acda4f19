#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/signal/filters.hpp"
#include "dfd/tensor/ops.hpp"
#include "dfd/tensor/tensor.hpp"

// Temporal noise extraction with the learnable soft threshold:
//
//   1. spatial low-pass of every frame (Gaussian 49 px, sigma 7.7)
//   2. A_i = -1/4 F_{i-1} + 1/2 F_i - 1/4 F_{i+1}
//   3. per-batch normalization to [0,1] with mean 1/2 (kept signed, i.e. minus 1/2)
//   4. A'_i = thr_t(A_i) - thr_t(-A_i)
//   5. G_i = |A'_i - A'_{i-1}|
//   6. T_i = 1/32 G_{i-2} + 1/8 G_{i-1} + 3/16 G_i + 1/8 G_{i+1} + 1/32 G_{i+2}
//
// T_i depends on frames F_{i-4} .. F_{i+3}, so clips lose 4 leading and 3
// trailing frames.
namespace dfd::signal {

inline constexpr std::size_t kFramesBefore = 4;
inline constexpr std::size_t kFramesAfter = 3;
inline constexpr std::size_t kWindowLength = kFramesBefore + 1 + kFramesAfter;
// A_{i-3} .. A_{i+2}
inline constexpr std::size_t kHighpassPlanes = 6;

struct TemporalNoiseConfig {
  static constexpr std::array<double, 3> kHighpassTaps{-0.25, 0.5, -0.25};
  static constexpr std::array<double, 5> kLowpassTaps{1.0 / 32, 1.0 / 8, 3.0 / 16, 1.0 / 8, 1.0 / 32};

  std::size_t lowpass_size = 49;
  double lowpass_sigma = 7.7;
  double initial_threshold = 1.0 / 40.0;
  double normalization_eps = 1e-8;
  // false reproduces G_i = |A_i - A_{i-1}| on the un-thresholded signal.
  bool difference_thresholded = true;
};

// Frames F_{i-4} .. F_{i+3} around center index i, each [3,H,W].
template <typename S>
struct FrameWindow {
  std::vector<Tensor<S>> frames;
  std::size_t center = 0;

  void validate() const {
    require(frames.size() == kWindowLength, "FrameWindow: need " + std::to_string(kWindowLength) +
                                                " frames (i-4 .. i+3), got " + std::to_string(frames.size()));
    for (const auto& f : frames)
      require(f.shape() == frames.front().shape(), "FrameWindow: frames differ in shape");
  }
};

template <typename S>
Tensor<S> temporal_lowpass_frame(const Tensor<S>& frame, const TemporalNoiseConfig& cfg) {
  return blur_planes(frame, gaussian_kernel_1d(cfg.lowpass_size, cfg.lowpass_sigma));
}

template <typename S>
Tensor<S> temporal_highpass(const Tensor<S>& prev, const Tensor<S>& cur, const Tensor<S>& next) {
  require(prev.shape() == cur.shape() && next.shape() == cur.shape(), "temporal_highpass: frame shape mismatch");
  constexpr auto taps = TemporalNoiseConfig::kHighpassTaps;
  Tensor<S> out(cur.shape());
  auto pv = prev.values(), cv = cur.values(), nv = next.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i)
    ov[i] = static_cast<S>(taps[0] * pv[i] + taps[1] * cv[i] + taps[2] * nv[i]);
  return out;
}

/**
 * Steps 1-2 for every frame of a clip: entry j holds A_j for
 * 1 <= j <= n-2; the two end entries are empty tensors.
 */
template <typename S>
std::vector<Tensor<S>> clip_highpass(std::span<const Tensor<S>> frames, const TemporalNoiseConfig& cfg) {
  std::vector<Tensor<S>> low;
  low.reserve(frames.size());
  for (const auto& f : frames) low.push_back(temporal_lowpass_frame(f, cfg));
  std::vector<Tensor<S>> highpass(frames.size());
  for (std::size_t j = 1; j + 1 < frames.size(); ++j) highpass[j] = temporal_highpass(low[j - 1], low[j], low[j + 1]);
  return highpass;
}

// Stacks A_{i-3} .. A_{i+2} from a clip_highpass result into [6,C,H,W].
template <typename S>
Tensor<S> highpass_window(std::span<const Tensor<S>> clip_planes, std::size_t center) {
  require(center >= kFramesBefore && center + kFramesAfter < clip_planes.size(),
          "highpass_window: frame " + std::to_string(center) + " lacks temporal support");
  const Shape& plane = clip_planes[center].shape();
  Shape shape{kHighpassPlanes};
  shape.insert(shape.end(), plane.begin(), plane.end());
  Tensor<S> out(shape);
  const std::size_t stride = clip_planes[center].numel();
  for (std::size_t k = 0; k < kHighpassPlanes; ++k) {
    const auto& src = clip_planes[center - 3 + k];
    std::copy(src.values().begin(), src.values().end(), out.values().begin() + k * stride);
  }
  return out;
}

/**
 * Step 3 on a whole batch: x -> (x - mu_B) / (2 max|x - mu_B| + eps), i.e. the
 * [0,1] / mean-1/2 map shifted down by 1/2 so the result stays signed. An
 * all-zero batch maps to all zeros.
 */
template <typename S>
Tensor<S> normalize_highpass_batch(const Tensor<S>& highpass, double eps) {
  double mu = 0;
  for (S v : highpass.values()) mu += v;
  mu /= static_cast<double>(highpass.numel());
  double peak = 0;
  for (S v : highpass.values()) peak = std::max(peak, std::abs(static_cast<double>(v) - mu));
  const double denom = 2 * peak + eps;
  Tensor<S> out(highpass.shape());
  auto iv = highpass.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = static_cast<S>((iv[i] - mu) / denom);
  return out;
}

/**
 * Steps 3-6 on a batch of high-pass stacks [N,6,C,H,W]; returns T [N,C,H,W].
 * Differentiable with respect to the scalar threshold tensor.
 */
template <typename S>
Tensor<S> temporal_noise_from_highpass(Tape<S>& tape, const Tensor<S>& highpass, const Tensor<S>& threshold,
                                       const TemporalNoiseConfig& cfg) {
  require(highpass.rank() == 5 && highpass.dim(1) == kHighpassPlanes,
          "temporal_noise: expected high-pass stack [N,6,C,H,W], got " + shape_str(highpass.shape()));
  Tensor<S> centered = normalize_highpass_batch(highpass, cfg.normalization_eps);
  Tensor<S> signal = centered;
  if (cfg.difference_thresholded) {
    Tensor<S> pos = ops::soft_threshold(tape, centered, threshold);
    Tensor<S> neg = ops::soft_threshold(tape, ops::neg(tape, centered), threshold);
    signal = ops::sub(tape, pos, neg);
  }
  constexpr auto taps = TemporalNoiseConfig::kLowpassTaps;
  Tensor<S> result;
  for (std::size_t k = 1; k < kHighpassPlanes; ++k) {
    Tensor<S> g = ops::abs(tape, ops::sub(tape, ops::select(tape, signal, 1, k), ops::select(tape, signal, 1, k - 1)));
    Tensor<S> term = ops::scale(tape, g, static_cast<S>(taps[k - 1]));
    result = k == 1 ? term : ops::add(tape, result, term);
  }
  return result;
}

// T_i for a single window (batch of one). Output [C,H,W].
template <typename S>
Tensor<S> temporal_noise(Tape<S>& tape, const FrameWindow<S>& window, const Tensor<S>& threshold,
                         const TemporalNoiseConfig& cfg = {}) {
  window.validate();
  auto planes = clip_highpass(std::span<const Tensor<S>>(window.frames), cfg);
  Tensor<S> stack = highpass_window(std::span<const Tensor<S>>(planes), kFramesBefore);
  Shape batched{1};
  batched.insert(batched.end(), stack.shape().begin(), stack.shape().end());
  Tensor<S> batch(batched, std::vector<S>(stack.values().begin(), stack.values().end()));
  Tensor<S> t = temporal_noise_from_highpass(tape, batch, threshold, cfg);
  return ops::select(tape, t, 0, 0);
}

// Temporal noise for every frame of a clip that has full support; frames
// inside the 4/3-frame margins are skipped and listed.
template <typename S>
struct ClipTemporalNoise {
  std::vector<std::size_t> emitted;
  std::vector<Tensor<S>> planes;
  std::vector<std::size_t> skipped;
};

template <typename S>
ClipTemporalNoise<S> clip_temporal_noise(std::span<const Tensor<S>> frames, S threshold,
                                         const TemporalNoiseConfig& cfg = {}) {
  ClipTemporalNoise<S> out;
  auto planes = clip_highpass(frames, cfg);
  Tensor<S> t = Tensor<S>::scalar(threshold);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i < kFramesBefore || i + kFramesAfter >= frames.size()) {
      out.skipped.push_back(i);
      continue;
    }
    Tensor<S> stack = highpass_window(std::span<const Tensor<S>>(planes), i);
    Shape batched{1};
    batched.insert(batched.end(), stack.shape().begin(), stack.shape().end());
    Tape<S> tape;
    Tensor<S> tn = temporal_noise_from_highpass(tape, Tensor<S>(batched, std::vector<S>(stack.values().begin(),
                                                                                       stack.values().end())),
                                                t, cfg);
    Shape single(tn.shape().begin() + 1, tn.shape().end());
    out.emitted.push_back(i);
    out.planes.emplace_back(single, std::vector<S>(tn.values().begin(), tn.values().end()));
  }
  return out;
}

}  // namespace dfd::signal
