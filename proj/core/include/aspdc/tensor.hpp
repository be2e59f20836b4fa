#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aspdc/errors.hpp"

namespace aspdc {

// N x C x H x W extents. Row-major storage with w fastest.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  constexpr std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr std::size_t plane() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr std::size_t index(int ni, int ci, int y, int x) const {
    return ((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x;
  }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  // Empty until the first gradient is accumulated.
  std::vector<T> grad;
  bool requires_grad = false;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

// Reference-counted handle to a dense float tensor. Copying a handle aliases
// the same storage; use clone() for a deep copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1, 1, 1, 1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int n() const { return impl_->shape.n; }
  int c() const { return impl_->shape.c; }
  int h() const { return impl_->shape.h; }
  int w() const { return impl_->shape.w; }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T& at(int ni, int ci, int y, int x) { return impl_->data[impl_->shape.index(ni, ci, y, x)]; }
  T at(int ni, int ci, int y, int x) const { return impl_->data[impl_->shape.index(ni, ci, y, x)]; }

  // Value of a single-element tensor.
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return {impl_->grad_buffer(), impl_->data.size()}; }
  void zero_grad();

  // Deep copy of the values; the copy does not require grad.
  BasicTensor clone() const;

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape());
    for (std::size_t i = 0; i < numel(); ++i) out.data()[i] = static_cast<U>(impl_->data[i]);
    return out;
  }

  const std::shared_ptr<Impl>& impl() const { return impl_; }
  bool is_same(const BasicTensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
class NoGradGuard;

// Ordered record of differentiable ops. One tape per thread and scalar type.
// backward() replays the records in reverse order, then clears the tape.
template <typename T>
class GradTape {
 public:
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;
  using BackwardFn = std::function<void(const std::vector<ImplPtr>& inputs, detail::TensorImpl<T>& output)>;

  struct Record {
    const char* op = "";
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    BackwardFn backward;
  };

  static GradTape& current();

  bool recording() const { return enabled_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  void push(Record record) { records_.push_back(std::move(record)); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad tensor
  // reachable from `loss`. Leaf gradients accumulate across calls until
  // zero_grad(). With keep_tape the records survive for another replay.
  void backward(const BasicTensor<T>& loss, bool keep_tape = false);

 private:
  friend class NoGradGuard<T>;
  bool enabled_ = true;
  std::vector<Record> records_;
};

template <typename T>
class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradTape<T>::current().enabled_) { GradTape<T>::current().enabled_ = false; }
  ~NoGradGuard() { GradTape<T>::current().enabled_ = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
void backward(const BasicTensor<T>& loss, bool keep_tape = false) {
  GradTape<T>::current().backward(loss, keep_tape);
}

namespace detail {

// Throws NumericError if any value is NaN or Inf.
template <typename T>
void check_finite(const TensorImpl<T>& t, const char* op);

}  // namespace detail

}  // namespace aspdc
