#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/tensor/tensor.hpp"

namespace dfd::ops {

enum class Mode { kTrain, kEval };

// Running statistics of one batch-norm layer.
template <typename S>
struct BatchNormState {
  std::vector<S> running_mean;
  std::vector<S> running_var;
  S momentum = S(0.1);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels) : running_mean(channels, S(0)), running_var(channels, S(1)) {}
};

/**
 * Per-channel normalization of an NCHW tensor followed by the affine map
 * gamma * x_hat + beta.
 *
 * Training mode normalizes with the biased batch variance and, when `state`
 * is given, updates the running statistics with the unbiased variance using
 * state->momentum. Eval mode normalizes with the running statistics.
 */
template <typename S>
Tensor<S> batch_norm(Tape<S>& tape, const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta, S eps,
                     BatchNormState<S>* state, Mode mode) {
  require(input.rank() == 4, "batch_norm: input must be NCHW");
  require(eps > S(0), "batch_norm: eps must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  require(gamma.numel() == c && beta.numel() == c, "batch_norm: gamma/beta must have one entry per channel");
  const std::size_t count = n * plane;
  if (mode == Mode::kEval)
    require(state != nullptr && state->running_mean.size() == c, "batch_norm: eval mode needs running statistics");

  std::vector<S> mean(c), inv_std(c);
  auto xv = input.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    S mu, var;
    if (mode == Mode::kTrain) {
      S total = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < plane; ++p) total += xv[(b * c + ch) * plane + p];
      mu = total / static_cast<S>(count);
      S sq = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const S d = xv[(b * c + ch) * plane + p] - mu;
          sq += d * d;
        }
      var = sq / static_cast<S>(count);
      if (state != nullptr) {
        const S unbiased = count > 1 ? sq / static_cast<S>(count - 1) : var;
        state->running_mean[ch] = (S(1) - state->momentum) * state->running_mean[ch] + state->momentum * mu;
        state->running_var[ch] = (S(1) - state->momentum) * state->running_var[ch] + state->momentum * unbiased;
      }
    } else {
      mu = state->running_mean[ch];
      var = state->running_var[ch];
    }
    mean[ch] = mu;
    inv_std[ch] = S(1) / std::sqrt(var + eps);
  }

  Tensor<S> out(input.shape());
  std::vector<S> x_hat(input.numel());
  auto ov = out.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (b * c + ch) * plane + p;
        x_hat[i] = (xv[i] - mean[ch]) * inv_std[ch];
        ov[i] = gv[ch] * x_hat[i] + bv[ch];
      }

  if (input.requires_grad() || gamma.requires_grad() || beta.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [input, gamma, beta, out, x_hat = std::move(x_hat), inv_std = std::move(inv_std), n, c, plane,
                      count, mode]() mutable {
      std::span<const S> g = out.grad();
      auto gv = gamma.values();
      std::vector<S> sum_g(c, S(0)), sum_gx(c, S(0));
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = (b * c + ch) * plane + p;
            sum_g[ch] += g[i];
            sum_gx[ch] += g[i] * x_hat[i];
          }
      if (gamma.requires_grad()) {
        auto gg = gamma.grad();
        for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad();
        for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
      }
      if (input.requires_grad()) {
        auto gi = input.grad();
        const S inv_count = S(1) / static_cast<S>(count);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const S k = gv[ch] * inv_std[ch];
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = (b * c + ch) * plane + p;
              if (mode == Mode::kTrain)
                gi[i] += k * (g[i] - inv_count * sum_g[ch] - x_hat[i] * inv_count * sum_gx[ch]);
              else
                gi[i] += k * g[i];
            }
          }
      }
    });
  }
  return out;
}

}  // namespace dfd::ops
