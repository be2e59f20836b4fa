#pragma once

#include <span>
#include <vector>

#include "aspdc/tensor.hpp"

// Differentiable tensor ops. Every op validates shapes, rejects non-finite
// outputs, and records itself on the thread's GradTape when any input
// requires grad. Spatial ops use zero padding.
namespace aspdc {

// weight: (c_out, c_in, kh, kw); bias: (1, c_out, 1, 1) or undefined.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      int stride = 1, int padding = 0, int dilation = 1);

// Transposed convolution producing (h * stride, w * stride) outputs.
// weight: (c_in, c_out, kh, kw), the layout of the adjoint conv2d.
template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                        int stride, int padding);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor);

// a: (n, 1, h, w) broadcast over the channels of f: (n, c, h, w).
template <typename T>
BasicTensor<T> mul_channel_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& f);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts);
template <typename T>
BasicTensor<T> concat_channels(std::initializer_list<BasicTensor<T>> parts) {
  std::vector<BasicTensor<T>> v(parts);
  return concat_channels<T>(std::span<const BasicTensor<T>>(v));
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int begin, int count);
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& x, std::span<const int> sizes);

// Softmax across the channel axis at every (n, y, x).
template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& x);

// Scalar reductions (64-bit accumulation).
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
// Mean of squared differences over all elements.
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Non-differentiable helpers.
template <typename T>
BasicTensor<T> clamp01(const BasicTensor<T>& x);

}  // namespace aspdc
