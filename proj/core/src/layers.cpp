#include "aspdc/layers.hpp"

#include <cmath>

namespace aspdc {

template <typename T>
BasicTensor<T> xavier_normal(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int padding_, int dilation_, Rng& rng)
    : weight(xavier_normal<T>(Shape{out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel,
                              out_channels * kernel * kernel, rng)),
      bias(Shape{1, out_channels, 1, 1}),
      stride(stride_),
      padding(padding_),
      dilation(dilation_) {
  weight.set_requires_grad();
  bias.set_requires_grad();
}

template <typename T>
void Conv2d<T>::zero_init() {
  for (auto& v : weight.data()) v = T(0);
  for (auto& v : bias.data()) v = T(0);
}

template <typename T>
void Conv2d<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
Deconv2d<T>::Deconv2d(int in_channels, int out_channels, Rng& rng)
    : weight(xavier_normal<T>(Shape{in_channels, out_channels, 3, 3}, in_channels * 9, out_channels * 9, rng)),
      bias(Shape{1, out_channels, 1, 1}) {
  weight.set_requires_grad();
  bias.set_requires_grad();
}

template <typename T>
void Deconv2d<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
ResBlock<T>::ResBlock(int channels, Rng& rng)
    : first(channels, channels, 3, 1, 1, 1, rng), second(channels, channels, 3, 1, 1, 1, rng) {}

template <typename T>
void ResBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  first.collect(out, prefix + ".conv1");
  second.collect(out, prefix + ".conv2");
}

template BasicTensor<float> xavier_normal<float>(Shape, int, int, Rng&);
template BasicTensor<double> xavier_normal<double>(Shape, int, int, Rng&);
template class Conv2d<float>;
template class Conv2d<double>;
template class Deconv2d<float>;
template class Deconv2d<double>;
template class ResBlock<float>;
template class ResBlock<double>;

}  // namespace aspdc
