#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/tensor/conv.hpp"
#include "dfd/tensor/norm.hpp"
#include "dfd/tensor/ops.hpp"
#include "dfd/tensor/tensor.hpp"

namespace dfd::nn {

using ops::Mode;

template <typename S>
struct NamedParameter {
  std::string name;
  Tensor<S> tensor;
  bool weight_decay = true;
};

// Non-trainable state that still belongs in a checkpoint.
template <typename S>
struct NamedBuffer {
  std::string name;
  std::vector<S>* values;
};

// One row of a shape trace.
struct TraceEntry {
  std::string name;
  std::string kind;
  Shape output;  // [C,H,W]
  std::size_t parameters = 0;
  std::size_t receptive_field = 1;
};

// Shape, receptive field and jump (input pixels per output step) of the
// feature map flowing through a trace.
struct TraceState {
  Shape shape;  // [C,H,W]
  std::size_t receptive_field = 1;
  std::size_t jump = 1;

  void apply_window(std::size_t kernel, std::size_t stride) {
    receptive_field += (kernel - 1) * jump;
    jump *= stride;
  }
};

using Rng = std::mt19937_64;

template <typename S>
Tensor<S> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  return Tensor<S>::randn(std::move(shape), rng, static_cast<S>(std::sqrt(2.0 / static_cast<double>(fan_in))), true);
}

template <typename S>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
              std::size_t padding, Rng& rng)
      : name_(std::move(name)),
        weight_(he_normal<S>(Shape{out, in, kernel, kernel}, in * kernel * kernel, rng)),
        stride_(stride),
        padding_(padding) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x) const { return ops::conv2d(tape, x, weight_, stride_, padding_); }

  void trace(TraceState& st, std::vector<TraceEntry>& out) const {
    require(st.shape[0] == weight_.dim(1), name_ + ": expects " + std::to_string(weight_.dim(1)) +
                                               " input channels, got " + std::to_string(st.shape[0]));
    const std::size_t k = weight_.dim(2);
    st.shape = {weight_.dim(0), ops::pooled_extent(st.shape[1], k, stride_, padding_),
                ops::pooled_extent(st.shape[2], k, stride_, padding_)};
    st.apply_window(k, stride_);
    out.push_back({name_, "conv" + std::to_string(k) + "x" + std::to_string(k) + "/s" + std::to_string(stride_),
                   st.shape, weight_.numel(), st.receptive_field});
  }

  void collect(std::vector<NamedParameter<S>>& params) const { params.push_back({name_ + ".weight", weight_, true}); }

 private:
  std::string name_;
  Tensor<S> weight_;
  std::size_t stride_ = 1, padding_ = 0;
};

template <typename S>
class SeparableConvLayer {
 public:
  SeparableConvLayer() = default;
  SeparableConvLayer(std::string name, std::size_t in, std::size_t out, Rng& rng)
      : name_(std::move(name)),
        depthwise_(he_normal<S>(Shape{in, 1, 3, 3}, 9, rng)),
        pointwise_(he_normal<S>(Shape{out, in, 1, 1}, in, rng)) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x) const {
    return ops::separable_conv2d(tape, x, depthwise_, pointwise_, 1);
  }

  void trace(TraceState& st, std::vector<TraceEntry>& out) const {
    require(st.shape[0] == depthwise_.dim(0), name_ + ": expects " + std::to_string(depthwise_.dim(0)) +
                                                  " input channels, got " + std::to_string(st.shape[0]));
    st.shape[0] = pointwise_.dim(0);
    st.apply_window(3, 1);
    out.push_back({name_, "sepconv3x3", st.shape, depthwise_.numel() + pointwise_.numel(), st.receptive_field});
  }

  void collect(std::vector<NamedParameter<S>>& params) const {
    params.push_back({name_ + ".depthwise", depthwise_, true});
    params.push_back({name_ + ".pointwise", pointwise_, true});
  }

 private:
  std::string name_;
  Tensor<S> depthwise_, pointwise_;
};

template <typename S>
class BatchNormLayer {
 public:
  static constexpr double kEps = 1e-3;

  BatchNormLayer() = default;
  BatchNormLayer(std::string name, std::size_t channels)
      : name_(std::move(name)),
        gamma_(Shape{channels}, S(1), true),
        beta_(Shape{channels}, S(0), true),
        state_(std::make_shared<ops::BatchNormState<S>>(channels)) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) const {
    return ops::batch_norm(tape, x, gamma_, beta_, static_cast<S>(kEps), state_.get(), mode);
  }

  void trace(const TraceState& st, std::vector<TraceEntry>& out) const {
    out.push_back({name_, "batchnorm", st.shape, gamma_.numel() + beta_.numel(), st.receptive_field});
  }

  void collect(std::vector<NamedParameter<S>>& params) const {
    params.push_back({name_ + ".gamma", gamma_, true});
    params.push_back({name_ + ".beta", beta_, true});
  }

  void collect_buffers(std::vector<NamedBuffer<S>>& buffers) const {
    buffers.push_back({name_ + ".running_mean", &state_->running_mean});
    buffers.push_back({name_ + ".running_var", &state_->running_var});
  }

 private:
  std::string name_;
  Tensor<S> gamma_, beta_;
  std::shared_ptr<ops::BatchNormState<S>> state_;
};

template <typename S>
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::string name, std::size_t in, std::size_t out, Rng& rng)
      : name_(std::move(name)),
        weight_(Tensor<S>::uniform(Shape{out, in}, rng, static_cast<S>(-std::sqrt(6.0 / static_cast<double>(in + out))),
                                   static_cast<S>(std::sqrt(6.0 / static_cast<double>(in + out))), true)),
        bias_(Shape{out}, S(0), true) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x) const { return ops::fully_connected(tape, x, weight_, bias_); }

  void trace(TraceState& st, std::vector<TraceEntry>& out) const {
    require(st.shape[0] == weight_.dim(1), name_ + ": feature mismatch");
    st.shape = {weight_.dim(0)};
    out.push_back({name_, "dense", st.shape, weight_.numel() + bias_.numel(), st.receptive_field});
  }

  void collect(std::vector<NamedParameter<S>>& params) const {
    params.push_back({name_ + ".weight", weight_, true});
    params.push_back({name_ + ".bias", bias_, true});
  }

 private:
  std::string name_;
  Tensor<S> weight_, bias_;
};

// 3x3 max-pool, stride 2, "same" padding.
inline void trace_pool(const std::string& name, TraceState& st, std::vector<TraceEntry>& out) {
  st.shape = {st.shape[0], ops::pooled_extent(st.shape[1], 3, 2, 1), ops::pooled_extent(st.shape[2], 3, 2, 1)};
  st.apply_window(3, 2);
  out.push_back({name, "maxpool3x3/s2", st.shape, 0, st.receptive_field});
}

}  // namespace dfd::nn
