#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dfd/core/error.hpp"

namespace dfd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/**
 * Dense row-major array that can participate in a gradient tape.
 *
 * A Tensor is a shared handle: copies alias the same storage. Parameters are
 * tensors created with requires_grad = true; every op whose inputs require
 * gradients produces an output that does too.
 */
template <typename Scalar>
class Tensor {
  struct Storage {
    Shape shape;
    std::vector<Scalar> values;
    std::vector<Scalar> grad;
    bool requires_grad = false;
  };

 public:
  using value_type = Scalar;

  Tensor() : storage_(std::make_shared<Storage>()) {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0), bool requires_grad = false)
      : storage_(std::make_shared<Storage>()) {
    storage_->values.assign(shape_size(shape), fill);
    storage_->shape = std::move(shape);
    storage_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false)
      : storage_(std::make_shared<Storage>()) {
    require(shape_size(shape) == values.size(),
            "tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                shape_str(shape));
    storage_->shape = std::move(shape);
    storage_->values = std::move(values);
    storage_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), Scalar(0), requires_grad);
  }

  static Tensor scalar(Scalar value, bool requires_grad = false) {
    return Tensor(Shape{1}, value, requires_grad);
  }

  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, Scalar stddev = Scalar(1), bool requires_grad = false) {
    Tensor t(std::move(shape), Scalar(0), requires_grad);
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& v : t.storage_->values) v = static_cast<Scalar>(dist(rng));
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi, bool requires_grad = false) {
    Tensor t(std::move(shape), Scalar(0), requires_grad);
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.storage_->values) v = static_cast<Scalar>(dist(rng));
    return t;
  }

  const Shape& shape() const { return storage_->shape; }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t numel() const { return storage_->values.size(); }

  std::span<Scalar> values() { return storage_->values; }
  std::span<const Scalar> values() const { return storage_->values; }
  Scalar* data() { return storage_->values.data(); }
  const Scalar* data() const { return storage_->values.data(); }

  Scalar item() const {
    require(numel() == 1, "tensor: item() on tensor of shape " + shape_str(shape()));
    return storage_->values[0];
  }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool on) const { storage_->requires_grad = on; }

  bool has_grad() const { return !storage_->grad.empty(); }

  // Allocates a zero gradient buffer on first use. Constness of a Tensor is
  // shallow, like the handle it is: gradients accumulate through const copies.
  std::span<Scalar> grad() const {
    if (storage_->grad.empty()) storage_->grad.assign(numel(), Scalar(0));
    return storage_->grad;
  }

  void zero_grad() const { std::fill(storage_->grad.begin(), storage_->grad.end(), Scalar(0)); }
  void drop_grad() const {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }

  // Deep copy without gradient or tape participation.
  Tensor detached_copy() const { return Tensor(shape(), storage_->values, false); }

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  std::shared_ptr<Storage> storage_;
};

/**
 * Ordered record of executed differentiable operations.
 *
 * Ops append an entry whenever one of their inputs requires a gradient.
 * backward() replays the entries in reverse and may be called once per
 * recording; clear() starts a new recording without touching parameter
 * values.
 */
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(Tensor<Scalar> output, BackwardFn backward_fn) {
    require(!consumed_, "tape: recording onto a tape that was already differentiated; clear() it first");
    entries_.push_back(Entry{std::move(output), std::move(backward_fn)});
  }

  void backward(Tensor<Scalar> loss) {
    require(loss.numel() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    require(!entries_.empty(), "backward: tape is empty");
    require(!consumed_, "backward: tape already differentiated; re-run the forward pass first");
    require(loss.requires_grad(), "backward: loss does not depend on any parameter");
    loss.grad()[0] += Scalar(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;  // not reachable from the loss
      it->backward_fn();
    }
    consumed_ = true;
  }

  void clear() {
    entries_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    Tensor<Scalar> output;
    BackwardFn backward_fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

}  // namespace dfd
