#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/tensor/tensor.hpp"

// Elementwise arithmetic, reductions, pooling, the classifier head and the
// loss. Every op takes the tape it records onto as its first argument.
namespace dfd::ops {

namespace detail {

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <typename S>
void accumulate(Tensor<S> target, std::span<const S> delta) {
  if (!target.requires_grad()) return;
  auto g = target.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// Stable log(1 + exp(x)).
template <typename S>
S softplus(S x) {
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename S>
S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

template <typename S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (a.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out]() mutable {
      std::span<const S> g = out.grad();
      detail::accumulate(a, g);
      detail::accumulate(b, g);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (a.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out]() mutable {
      std::span<const S> g = out.grad();
      detail::accumulate(a, g);
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (a.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out]() mutable {
      std::span<const S> g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        auto bv = b.values();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        auto av = a.values();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& a, S factor) {
  Tensor<S> out(a.shape());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = factor * av[i];
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, out, factor]() mutable {
      auto ga = a.grad();
      std::span<const S> g = out.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> neg(Tape<S>& tape, const Tensor<S>& a) {
  return scale(tape, a, S(-1));
}

// |x|, with derivative 0 at x == 0.
template <typename S>
Tensor<S> abs(Tape<S>& tape, const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::abs(av[i]);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, out]() mutable {
      auto ga = a.grad();
      auto av = a.values();
      std::span<const S> g = out.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const S sign = av[i] > S(0) ? S(1) : (av[i] < S(0) ? S(-1) : S(0));
        ga[i] += sign * g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum(Tape<S>& tape, const Tensor<S>& a) {
  S total = 0;
  for (S v : a.values()) total += v;
  Tensor<S> out = Tensor<S>::scalar(total);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, out]() mutable {
      const S g = out.grad()[0];
      for (auto& v : a.grad()) v += g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(Tape<S>& tape, const Tensor<S>& a) {
  return scale(tape, sum(tape, a), S(1) / static_cast<S>(a.numel()));
}

template <typename S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& a, Shape shape) {
  require(shape_size(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor<S> out(std::move(shape), std::vector<S>(a.values().begin(), a.values().end()));
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, out]() mutable { detail::accumulate(a, std::span<const S>(out.grad())); });
  }
  return out;
}

// Removes `axis` by picking one index along it.
template <typename S>
Tensor<S> select(Tape<S>& tape, const Tensor<S>& a, std::size_t axis, std::size_t index) {
  require(axis < a.rank(), "select: axis out of range");
  require(index < a.dim(axis), "select: index " + std::to_string(index) + " out of range for axis of size " +
                                   std::to_string(a.dim(axis)));
  const Shape& in = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape shape;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (i != axis) shape.push_back(in[i]);
  Tensor<S> out(shape);
  const std::size_t extent = in[axis];
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.begin() + (o * extent + index) * inner, inner, ov.begin() + o * inner);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, out, outer, inner, extent, index]() mutable {
      auto ga = a.grad();
      std::span<const S> g = out.grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) ga[(o * extent + index) * inner + i] += g[o * inner + i];
    });
  }
  return out;
}

// Concatenates NCHW tensors along the channel axis.
template <typename S>
Tensor<S> concat_channels(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  for (const auto& p : parts) require(p.rank() == 4, "concat_channels: inputs must be NCHW");
  const std::size_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::size_t channels = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    require(p.dim(0) == n && p.dim(2) == h && p.dim(3) == w,
            "concat_channels: spatial/batch mismatch " + shape_str(parts[0].shape()) + " vs " +
                shape_str(p.shape()));
    channels += p.dim(1);
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor<S> out(Shape{n, channels, h, w});
  const std::size_t plane = h * w;
  auto ov = out.values();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.dim(1);
    auto pv = p.values();
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(pv.begin() + b * c * plane, c * plane, ov.begin() + (b * channels + offset) * plane);
    offset += c;
  }
  if (needs_grad) {
    out.set_requires_grad(true);
    tape.record(out, [parts, out, n, channels, plane]() mutable {
      std::span<const S> g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t c = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < c * plane; ++i) gp[b * c * plane + i] += g[(b * channels + offset) * plane + i];
        }
        offset += c;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> relu(Tape<S>& tape, const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > S(0) ? av[i] : S(0);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, out]() mutable {
      auto ga = a.grad();
      auto av = a.values();
      std::span<const S> g = out.grad();
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (av[i] > S(0)) ga[i] += g[i];
    });
  }
  return out;
}

inline std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require(in + 2 * padding >= kernel, "pool/conv: kernel larger than padded input");
  return (in + 2 * padding - kernel) / stride + 1;
}

// Max pooling over NCHW with implicit -inf padding.
template <typename S>
Tensor<S> maxpool2d(Tape<S>& tape, const Tensor<S>& a, std::size_t kernel, std::size_t stride,
                    std::size_t padding) {
  require(a.rank() == 4, "maxpool2d: input must be NCHW");
  require(padding < kernel, "maxpool2d: padding must be smaller than the kernel");
  const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t oh = pooled_extent(h, kernel, stride, padding);
  const std::size_t ow = pooled_extent(w, kernel, stride, padding);
  Tensor<S> out(Shape{n, c, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const S* src = av.data() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        S best = -std::numeric_limits<S>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        ov[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, out, argmax = std::move(argmax)]() mutable {
      auto ga = a.grad();
      std::span<const S> g = out.grad();
      for (std::size_t o = 0; o < g.size(); ++o) ga[argmax[o]] += g[o];
    });
  }
  return out;
}

// [N,C,H,W] -> [N,C]
template <typename S>
Tensor<S> global_avg_pool(Tape<S>& tape, const Tensor<S>& a) {
  require(a.rank() == 4, "global_avg_pool: input must be NCHW");
  const std::size_t n = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<S> out(Shape{n, c});
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n * c; ++i) {
    S total = 0;
    for (std::size_t p = 0; p < plane; ++p) total += av[i * plane + p];
    ov[i] = total / static_cast<S>(plane);
  }
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [a, out, plane]() mutable {
      auto ga = a.grad();
      std::span<const S> g = out.grad();
      const S inv = S(1) / static_cast<S>(plane);
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t p = 0; p < plane; ++p) ga[i * plane + p] += g[i] * inv;
    });
  }
  return out;
}

// y = x W^T + b with x [N,F], W [O,F], b [O].
template <typename S>
Tensor<S> fully_connected(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  require(x.rank() == 2 && weight.rank() == 2 && bias.rank() == 1, "fully_connected: expected x[N,F], W[O,F], b[O]");
  const std::size_t n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  require(weight.dim(1) == f, "fully_connected: feature mismatch " + shape_str(x.shape()) + " vs " +
                                  shape_str(weight.shape()));
  require(bias.dim(0) == o, "fully_connected: bias size mismatch");
  Tensor<S> out(Shape{n, o});
  auto xv = x.values();
  auto wv = weight.values();
  auto bv = bias.values();
  auto ov = out.values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < o; ++j) {
      S acc = bv[j];
      for (std::size_t k = 0; k < f; ++k) acc += xv[b * f + k] * wv[j * f + k];
      ov[b * o + j] = acc;
    }
  if (x.requires_grad() || weight.requires_grad() || bias.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [x, weight, bias, out, n, f, o]() mutable {
      std::span<const S> g = out.grad();
      auto xv = x.values();
      auto wv = weight.values();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t j = 0; j < o; ++j)
            for (std::size_t k = 0; k < f; ++k) gx[b * f + k] += g[b * o + j] * wv[j * f + k];
      }
      if (weight.requires_grad()) {
        auto gw = weight.grad();
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t j = 0; j < o; ++j)
            for (std::size_t k = 0; k < f; ++k) gw[j * f + k] += g[b * o + j] * xv[b * f + k];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t j = 0; j < o; ++j) gb[j] += g[b * o + j];
      }
    });
  }
  return out;
}

// Mean over the batch of -log softmax(scores)[label]. scores is [N,K].
template <typename S>
Tensor<S> softmax_cross_entropy(Tape<S>& tape, const Tensor<S>& scores, std::span<const int> labels) {
  require(scores.rank() == 2, "softmax_cross_entropy: scores must be [N,K]");
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  require(labels.size() == n, "softmax_cross_entropy: one label per row required");
  std::vector<S> probs(n * k);
  auto sv = scores.values();
  S loss = 0;
  for (std::size_t b = 0; b < n; ++b) {
    require(labels[b] >= 0 && static_cast<std::size_t>(labels[b]) < k, "softmax_cross_entropy: label out of range");
    const S* row = sv.data() + b * k;
    const S peak = *std::max_element(row, row + k);
    S denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - peak);
    const S log_denom = std::log(denom) + peak;
    for (std::size_t j = 0; j < k; ++j) probs[b * k + j] = std::exp(row[j] - log_denom);
    loss += log_denom - row[labels[b]];
  }
  Tensor<S> out = Tensor<S>::scalar(loss / static_cast<S>(n));
  if (scores.requires_grad()) {
    out.set_requires_grad(true);
    std::vector<int> label_copy(labels.begin(), labels.end());
    tape.record(out, [scores, out, probs = std::move(probs), label_copy = std::move(label_copy), n, k]() mutable {
      const S g = out.grad()[0] / static_cast<S>(n);
      auto gs = scores.grad();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t j = 0; j < k; ++j)
          gs[b * k + j] += g * (probs[b * k + j] - (static_cast<int>(j) == label_copy[b] ? S(1) : S(0)));
    });
  }
  return out;
}

inline constexpr double kMinThreshold = 1e-6;

/**
 * Smooth learnable threshold applied elementwise:
 *
 *   thr_t(F) = (1/f) * (ln(1 + exp(x)) + 10 / (1 + exp(-x))),  f = 10/t,  x = f (F - t)
 *
 * Passes F through for F >> t and suppresses it toward 0 for F << t.
 * Differentiable in both F and the scalar t. A non-positive t is clamped to
 * 1e-6 (with a warning) before evaluation.
 */
template <typename S>
Tensor<S> soft_threshold(Tape<S>& tape, const Tensor<S>& input, const Tensor<S>& threshold) {
  require(threshold.numel() == 1, "soft_threshold: threshold must be a scalar tensor");
  S t = threshold.item();
  if (!(t > S(kMinThreshold))) {
    log().warn("soft_threshold: non-positive threshold {} clamped to {}", static_cast<double>(t), kMinThreshold);
    t = static_cast<S>(kMinThreshold);
  }
  const S f = S(10) / t;
  Tensor<S> out(input.shape());
  auto iv = input.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const S x = f * (iv[i] - t);
    ov[i] = (detail::softplus(x) + S(10) * detail::sigmoid(x)) / f;
  }
  if (input.requires_grad() || threshold.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [input, threshold, out, t, f]() mutable {
      std::span<const S> g = out.grad();
      auto iv = input.values();
      const bool want_input = input.requires_grad();
      std::span<S> gi;
      if (want_input) gi = input.grad();
      S dt = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const S x = f * (iv[i] - t);
        const S sig = detail::sigmoid(x);
        const S du_dx = sig + S(10) * sig * (S(1) - sig);
        if (want_input) gi[i] += g[i] * du_dx;
        // thr = (t/10) u(x), x = 10 F / t - 10
        const S u = detail::softplus(x) + S(10) * sig;
        dt += g[i] * (u / S(10) - du_dx * iv[i] / t);
      }
      if (threshold.requires_grad()) threshold.grad()[0] += dt;
    });
  }
  return out;
}

}  // namespace dfd::ops
