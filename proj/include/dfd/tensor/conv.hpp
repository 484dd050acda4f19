#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "dfd/core/error.hpp"
#include "dfd/tensor/ops.hpp"
#include "dfd/tensor/tensor.hpp"

// Convolutions over NCHW tensors with zero padding. Dense convolution is
// lowered to im2col + GEMM; depthwise convolution runs as direct loops.
namespace dfd::ops {

namespace detail {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t out_plane() const { return out_h * out_w; }
  bool is_pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && padding == 0; }
};

inline ConvGeometry conv_geometry(const Shape& input, std::size_t kh, std::size_t kw, std::size_t stride,
                                  std::size_t padding) {
  require(stride >= 1, "conv: stride must be >= 1");
  ConvGeometry g{input[1], input[2], input[3], kh, kw, stride, padding, 0, 0};
  g.out_h = pooled_extent(g.height, kh, stride, padding);
  g.out_w = pooled_extent(g.width, kw, stride, padding);
  return g;
}

// col[(c*kh + ky)*kw + kx][oy*ow + ox] = x[c][oy*s + ky - p][ox*s + kx - p]
template <typename S>
void im2col(const S* x, const ConvGeometry& g, S* col) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        S* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.out_plane();
        const S* plane = x + c * g.height * g.width;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          S* dst = row + oy * g.out_w;
          if (y < 0 || y >= h) {
            std::fill_n(dst, g.out_w, S(0));
            continue;
          }
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            dst[ox] = (xx < 0 || xx >= w) ? S(0) : plane[y * w + xx];
          }
        }
      }
}

template <typename S>
void col2im(const S* col, const ConvGeometry& g, S* x) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const S* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.out_plane();
        S* plane = x + c * g.height * g.width;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (y < 0 || y >= h) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (xx >= 0 && xx < w) plane[y * w + xx] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

/**
 * Cross-correlation of input [N,C,H,W] with kernel [K,C,kh,kw].
 * Output is [N,K,H',W'] with H' = floor((H + 2*padding - kh)/stride) + 1.
 */
template <typename S>
Tensor<S> conv2d(Tape<S>& tape, const Tensor<S>& input, const Tensor<S>& kernel, std::size_t stride = 1,
                 std::size_t padding = 0) {
  require(input.rank() == 4 && kernel.rank() == 4, "conv2d: expected input [N,C,H,W] and kernel [K,C,kh,kw]");
  require(input.dim(1) == kernel.dim(1), "conv2d: input has " + std::to_string(input.dim(1)) +
                                             " channels but kernel expects " + std::to_string(kernel.dim(1)));
  const auto g = detail::conv_geometry(input.shape(), kernel.dim(2), kernel.dim(3), stride, padding);
  const std::size_t n = input.dim(0), k = kernel.dim(0);
  const std::size_t in_sample = g.channels * g.height * g.width;
  const std::size_t out_sample = k * g.out_plane();
  Tensor<S> out(Shape{n, k, g.out_h, g.out_w});

  using Mat = detail::RowMatrix<S>;
  Eigen::Map<const Mat> w(kernel.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(g.patch()));
  std::vector<S> col(g.is_pointwise() ? 0 : g.patch() * g.out_plane());
  for (std::size_t b = 0; b < n; ++b) {
    const S* src = input.data() + b * in_sample;
    if (!g.is_pointwise()) {
      detail::im2col(src, g, col.data());
      src = col.data();
    }
    Eigen::Map<const Mat> cols(src, static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.out_plane()));
    Eigen::Map<Mat> dst(out.data() + b * out_sample, static_cast<Eigen::Index>(k),
                        static_cast<Eigen::Index>(g.out_plane()));
    dst.noalias() = w * cols;
  }

  if (input.requires_grad() || kernel.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [input, kernel, out, g, n, k, in_sample, out_sample]() mutable {
      using Mat = detail::RowMatrix<S>;
      const auto patch = static_cast<Eigen::Index>(g.patch());
      const auto plane = static_cast<Eigen::Index>(g.out_plane());
      const auto kk = static_cast<Eigen::Index>(k);
      Eigen::Map<const Mat> w(kernel.data(), kk, patch);
      std::span<const S> grad_out = out.grad();
      std::vector<S> col(g.patch() * g.out_plane());
      std::span<S> gk, gi;
      if (kernel.requires_grad()) gk = kernel.grad();
      if (input.requires_grad()) gi = input.grad();
      for (std::size_t b = 0; b < n; ++b) {
        Eigen::Map<const Mat> dout(grad_out.data() + b * out_sample, kk, plane);
        if (kernel.requires_grad()) {
          const S* src = input.data() + b * in_sample;
          if (!g.is_pointwise()) {
            detail::im2col(src, g, col.data());
            src = col.data();
          }
          Eigen::Map<const Mat> cols(src, patch, plane);
          Eigen::Map<Mat> dw(gk.data(), kk, patch);
          dw.noalias() += dout * cols.transpose();
        }
        if (input.requires_grad()) {
          if (g.is_pointwise()) {
            Eigen::Map<Mat> dx(gi.data() + b * in_sample, patch, plane);
            dx.noalias() += w.transpose() * dout;
          } else {
            Eigen::Map<Mat> dcol(col.data(), patch, plane);
            dcol.noalias() = w.transpose() * dout;
            detail::col2im(col.data(), g, gi.data() + b * in_sample);
          }
        }
      }
    });
  }
  return out;
}

/**
 * Per-channel spatial convolution: input [N,C,H,W], kernel [C,1,kh,kw].
 */
template <typename S>
Tensor<S> depthwise_conv2d(Tape<S>& tape, const Tensor<S>& input, const Tensor<S>& kernel, std::size_t stride,
                           std::size_t padding) {
  require(input.rank() == 4 && kernel.rank() == 4 && kernel.dim(1) == 1,
          "depthwise_conv2d: expected input [N,C,H,W] and kernel [C,1,kh,kw]");
  require(input.dim(1) == kernel.dim(0), "depthwise_conv2d: input has " + std::to_string(input.dim(1)) +
                                             " channels but kernel has " + std::to_string(kernel.dim(0)) +
                                             " filters");
  const auto g = detail::conv_geometry(input.shape(), kernel.dim(2), kernel.dim(3), stride, padding);
  const std::size_t n = input.dim(0), c = g.channels;
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
  Tensor<S> out(Shape{n, c, g.out_h, g.out_w});

  // Visits every (output index, input index, kernel index) triple that
  // contributes to the correlation.
  auto for_each_tap = [=](std::size_t plane_idx, auto&& body) {
    const std::size_t ch = plane_idx % c;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t kidx = (ch * g.kernel_h + ky) * g.kernel_w + kx;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (y < 0 || y >= h) continue;
          const std::size_t in_row = (plane_idx * g.height + static_cast<std::size_t>(y)) * g.width;
          const std::size_t out_row = (plane_idx * g.out_h + oy) * g.out_w;
          std::size_t ox_begin = 0;
          while (ox_begin < g.out_w && static_cast<std::ptrdiff_t>(ox_begin * g.stride + kx) - pad < 0) ++ox_begin;
          for (std::size_t ox = ox_begin; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (xx >= w) break;
            body(out_row + ox, in_row + static_cast<std::size_t>(xx), kidx);
          }
        }
      }
  };

  {
    S* o = out.data();
    const S* x = input.data();
    const S* kv = kernel.data();
    for (std::size_t p = 0; p < n * c; ++p)
      for_each_tap(p, [&](std::size_t oi, std::size_t ii, std::size_t ki) { o[oi] += kv[ki] * x[ii]; });
  }

  if (input.requires_grad() || kernel.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [input, kernel, out, n, c, for_each_tap]() mutable {
      const S* go = out.grad().data();
      const S* x = input.data();
      const S* kv = kernel.data();
      S* gi = input.requires_grad() ? input.grad().data() : nullptr;
      S* gk = kernel.requires_grad() ? kernel.grad().data() : nullptr;
      for (std::size_t p = 0; p < n * c; ++p)
        for_each_tap(p, [&](std::size_t oi, std::size_t ii, std::size_t ki) {
          if (gi) gi[ii] += kv[ki] * go[oi];
          if (gk) gk[ki] += x[ii] * go[oi];
        });
    });
  }
  return out;
}

/**
 * Depthwise convolution (one kh x kw filter per input channel) followed by a
 * 1x1 pointwise convolution mixing channels. depthwise_kernel is [C,1,kh,kw],
 * pointwise_kernel is [K,C,1,1]. Padding defaults to "same" for odd kernels.
 */
template <typename S>
Tensor<S> separable_conv2d(Tape<S>& tape, const Tensor<S>& input, const Tensor<S>& depthwise_kernel,
                           const Tensor<S>& pointwise_kernel, std::ptrdiff_t padding = -1) {
  require(pointwise_kernel.rank() == 4 && pointwise_kernel.dim(2) == 1 && pointwise_kernel.dim(3) == 1,
          "separable_conv2d: pointwise kernel must be [K,C,1,1]");
  require(pointwise_kernel.dim(1) == depthwise_kernel.dim(0),
          "separable_conv2d: pointwise kernel expects " + std::to_string(pointwise_kernel.dim(1)) +
              " channels but depthwise stage produces " + std::to_string(depthwise_kernel.dim(0)));
  const std::size_t pad = padding < 0 ? (depthwise_kernel.dim(2) - 1) / 2 : static_cast<std::size_t>(padding);
  Tensor<S> spatial = depthwise_conv2d(tape, input, depthwise_kernel, 1, pad);
  return conv2d(tape, spatial, pointwise_kernel, 1, 0);
}

}  // namespace dfd::ops
