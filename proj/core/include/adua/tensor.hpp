#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "adua/common.hpp"

namespace adua {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Shared payload behind Tensor handles. Tensors copy cheaply and alias; the
// tape's backward closures hold shared_ptrs to these, so gradients written
// during backward are visible through every alias.
template <typename S>
struct TensorData {
  Shape shape;
  std::vector<S> values;
  // Empty until a gradient is first accumulated. "Allocated" is meaningful:
  // the optimizer treats a grad buffer on a frozen parameter as a violation.
  std::vector<S> grad;
  bool requires_grad = false;
};

template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() : data_(std::make_shared<TensorData<S>>()) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.data_->values.assign(numel(shape), S{0});
    t.data_->shape = std::move(shape);
    return t;
  }

  static Tensor full(Shape shape, S value) {
    Tensor t;
    t.data_->values.assign(numel(shape), value);
    t.data_->shape = std::move(shape);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    if (values.size() != numel(shape)) {
      throw ShapeError("tensor init: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
    Tensor t;
    t.data_->shape = std::move(shape);
    t.data_->values = std::move(values);
    return t;
  }

  static Tensor scalar(S value) { return from({}, {value}); }

  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t dim(std::size_t i) const { return data_->shape[i]; }
  std::size_t size() const { return data_->values.size(); }

  std::span<const S> values() const { return data_->values; }
  std::span<S> values_mut() { return data_->values; }

  S item() const {
    if (size() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return data_->values[0];
  }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool b) { data_->requires_grad = b; }

  bool has_grad() const { return !data_->grad.empty(); }

  std::span<const S> grad() const {
    if (data_->grad.empty()) {
      throw ContractError("grad() on tensor with no accumulated gradient");
    }
    return data_->grad;
  }

  // Returns the grad buffer, allocating zeros on first use.
  std::span<S> grad_mut() {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), S{0});
    return data_->grad;
  }

  void zero_grad() {
    if (!data_->grad.empty()) data_->grad.assign(data_->values.size(), S{0});
  }

  // Drops the grad buffer entirely. Phase boundaries use this so that a
  // later freeze check can tell "never received a gradient" from "zeroed".
  void clear_grad() {
    data_->grad.clear();
    data_->grad.shrink_to_fit();
  }

  Tensor clone() const {
    Tensor t;
    t.data_->shape = data_->shape;
    t.data_->values = data_->values;
    t.data_->requires_grad = data_->requires_grad;
    return t;
  }

  std::shared_ptr<TensorData<S>> payload() const { return data_; }
  bool same_payload(const Tensor& other) const { return data_ == other.data_; }

 private:
  std::shared_ptr<TensorData<S>> data_;
};

// Gradient tape. Forward ops append backward closures in execution order;
// backward() replays them in reverse, which is a valid topological order of
// the dependency graph by construction. One backward pass per recording:
// reset() before the next step, or gradients double up.
template <typename S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }

  void record(std::function<void()> backward_fn) {
    if (recording_) entries_.push_back(std::move(backward_fn));
  }

  std::size_t recorded_ops() const { return entries_.size(); }
  std::uint64_t generation() const { return generation_; }

  void backward(const Tensor<S>& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward() requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
    }
    if (!std::isfinite(static_cast<double>(loss.values()[0]))) {
      throw TrainingError("backward() on non-finite loss");
    }
    auto payload = loss.payload();
    if (payload->grad.empty()) payload->grad.assign(1, S{0});
    payload->grad[0] += S{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void reset() {
    entries_.clear();
    ++generation_;
  }

 private:
  std::vector<std::function<void()>> entries_;
  bool recording_ = true;
  std::uint64_t generation_ = 0;
};

// RAII guard for gradient-free evaluation.
template <typename S>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<S>& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<S>& tape_;
  bool prev_;
};

}  // namespace adua
