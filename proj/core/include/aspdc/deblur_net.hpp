#pragma once

#include <cstdint>
#include <vector>

#include "aspdc/aspdc.hpp"
#include "aspdc/layers.hpp"

namespace aspdc {

struct DeblurNetConfig {
  int base_width = 32;  // doubled at each of the two downscales
  int n_modules = 6;
  AspdcConfig aspdc;

  int bottleneck_width() const { return base_width * 4; }
};

// Head: 3x3 stem, two ResBlocks, two stride-2 convs (C -> 2C -> 4C).
// Middle: ASPDC stack at width 4C. Tail: two stride-2 deconvs (4C -> 2C -> C)
// and a zero-initialised 3x3 conv to RGB. The network predicts a residual
// that is added to the blurred input.
template <typename T>
class DeblurNet {
 public:
  explicit DeblurNet(const DeblurNetConfig& config = {}, std::uint64_t seed = 0);

  struct Output {
    BasicTensor<T> image;     // I_b + residual, unclamped
    BasicTensor<T> residual;
    std::vector<BasicTensor<T>> attention;  // per ASPDC module
  };

  // Training forward pass. Input (n, 3, H, W) with H, W divisible by 4.
  Output forward(const BasicTensor<T>& blurred) const;
  // Inference: no tape, output clamped to [0, 1].
  BasicTensor<T> infer(const BasicTensor<T>& blurred) const;

  ParamList<T> parameters() const;
  const DeblurNetConfig& config() const { return config_; }

  Conv2d<T> stem;
  ResBlock<T> res1;
  ResBlock<T> res2;
  Conv2d<T> down1;
  Conv2d<T> down2;
  AspdcStack<T> stack;
  Deconv2d<T> up1;
  Deconv2d<T> up2;
  Conv2d<T> out;

 private:
  DeblurNetConfig config_;
};

template <typename T>
BasicTensor<T> deblur_forward(const DeblurNet<T>& net, const BasicTensor<T>& blurred) {
  return net.forward(blurred).image;
}

// Mean squared error between deblurred output and sharp target.
template <typename T>
BasicTensor<T> deblurring_loss(const BasicTensor<T>& deblurred, const BasicTensor<T>& sharp) {
  return mse(deblurred, sharp);
}

}  // namespace aspdc
