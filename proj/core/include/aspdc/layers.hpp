#pragma once

#include <string>
#include <vector>

#include "aspdc/ops.hpp"
#include "aspdc/rng.hpp"
#include "aspdc/tensor.hpp"

namespace aspdc {

template <typename T>
struct NamedParam {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  return total;
}

// Xavier (Glorot) normal: std = sqrt(2 / (fan_in + fan_out)).
template <typename T>
BasicTensor<T> xavier_normal(Shape shape, int fan_in, int fan_out, Rng& rng);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, int dilation, Rng& rng);

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return conv2d(x, weight, bias, stride, padding, dilation);
  }
  void zero_init();
  void collect(ParamList<T>& out, const std::string& prefix) const;

  BasicTensor<T> weight;
  BasicTensor<T> bias;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

// 3x3 stride-2 transposed convolution that doubles the spatial size.
template <typename T>
class Deconv2d {
 public:
  Deconv2d() = default;
  Deconv2d(int in_channels, int out_channels, Rng& rng);

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return deconv2d(x, weight, bias, 2, 1); }
  void collect(ParamList<T>& out, const std::string& prefix) const;

  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

// conv3x3 -> ReLU -> conv3x3, plus identity skip.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int channels, Rng& rng);

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add(x, second(relu(first(x)))); }
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Conv2d<T> first;
  Conv2d<T> second;
};

}  // namespace aspdc
