#include "aspdc/deblur_net.hpp"

#include "aspdc/ops.hpp"

namespace aspdc {

template <typename T>
DeblurNet<T>::DeblurNet(const DeblurNetConfig& config, std::uint64_t seed) : config_(config) {
  if (config.base_width < 1) throw ConfigError("deblur base width must be positive");
  config.aspdc.validate();
  Rng rng(seed);
  const int c1 = config.base_width;
  const int c2 = c1 * 2;
  const int c4 = c1 * 4;
  stem = Conv2d<T>(3, c1, 3, 1, 1, 1, rng);
  res1 = ResBlock<T>(c1, rng);
  res2 = ResBlock<T>(c1, rng);
  down1 = Conv2d<T>(c1, c2, 3, 2, 1, 1, rng);
  down2 = Conv2d<T>(c2, c4, 3, 2, 1, 1, rng);
  stack = AspdcStack<T>(c4, config.n_modules, config.aspdc, rng);
  up1 = Deconv2d<T>(c4, c2, rng);
  up2 = Deconv2d<T>(c2, c1, rng);
  out = Conv2d<T>(c1, 3, 3, 1, 1, 1, rng);
  out.zero_init();
}

template <typename T>
typename DeblurNet<T>::Output DeblurNet<T>::forward(const BasicTensor<T>& blurred) const {
  const Shape& s = blurred.shape();
  if (s.c != 3 || s.h % 4 != 0 || s.w % 4 != 0 || s.h == 0 || s.w == 0) {
    throw DimensionError("deblur_forward: expected (n, 3, H, W) with H, W divisible by 4, got " + s.str());
  }
  auto x = relu(stem(blurred));
  x = res2(res1(x));
  x = relu(down1(x));
  x = relu(down2(x));
  auto mid = stack.forward(x);
  x = relu(up1(mid.features));
  x = relu(up2(x));
  Output o;
  o.residual = out(x);
  o.image = add(blurred, o.residual);
  o.attention = std::move(mid.attention);
  return o;
}

template <typename T>
BasicTensor<T> DeblurNet<T>::infer(const BasicTensor<T>& blurred) const {
  NoGradGuard<T> guard;
  return clamp01(forward(blurred).image);
}

template <typename T>
ParamList<T> DeblurNet<T>::parameters() const {
  ParamList<T> p;
  stem.collect(p, "head.stem");
  res1.collect(p, "head.res1");
  res2.collect(p, "head.res2");
  down1.collect(p, "head.down1");
  down2.collect(p, "head.down2");
  stack.collect(p, "stack");
  up1.collect(p, "tail.up1");
  up2.collect(p, "tail.up2");
  out.collect(p, "tail.out");
  return p;
}

template class DeblurNet<float>;
template class DeblurNet<double>;

}  // namespace aspdc
