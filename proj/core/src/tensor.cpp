#include "aspdc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace aspdc {

std::string Shape::str() const {
  std::ostringstream os;
  os << "[" << n << ", " << c << ", " << h << ", " << w << "]";
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("negative tensor extent " + shape.str());
  }
  impl_->shape = shape;
  impl_->data.assign(shape.numel(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor of shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                         " values, got " + std::to_string(values.size()));
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(shape(), impl_->data);
}

template <typename T>
GradTape<T>& GradTape<T>::current() {
  thread_local GradTape tape;
  return tape;
}

template <typename T>
void GradTape<T>::backward(const BasicTensor<T>& loss, bool keep_tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  if (records_.empty() || !loss.requires_grad()) {
    throw ContractError("backward() called with an empty tape or a loss that does not require grad");
  }
  // Intermediate gradients restart from zero on every replay; only leaves accumulate.
  for (auto& r : records_) {
    if (!r.output->grad.empty()) std::fill(r.output->grad.begin(), r.output->grad.end(), T(0));
  }
  loss.impl()->grad_buffer()[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->inputs, *it->output);
  }
  if (!keep_tape) records_.clear();
}

namespace detail {

template <typename T>
void check_finite(const TensorImpl<T>& t, const char* op) {
  for (T v : t.data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output " + t.shape.str());
  }
}

template void check_finite<float>(const TensorImpl<float>&, const char*);
template void check_finite<double>(const TensorImpl<double>&, const char*);

}  // namespace detail

template class BasicTensor<float>;
template class BasicTensor<double>;
template class GradTape<float>;
template class GradTape<double>;

}  // namespace aspdc
