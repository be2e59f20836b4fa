#pragma once

#include <cstdint>
#include <vector>

#include "aspdc/layers.hpp"

namespace aspdc {

// out(c, p) = sum_{k in 3x3} filters_k(p) * features(c, p + offset_k).
// filters: (n, 9, h, w), one unnormalised 3x3 kernel per pixel shared by all
// channels; zero-padded borders.
template <typename T>
BasicTensor<T> apply_dynamic_filter(const BasicTensor<T>& features, const BasicTensor<T>& filters);

struct ReblurNetConfig {
  int base_width = 16;
  int levels = 3;  // stride-2 encoder stages (and matching decoder stages)
};

// Two encoder-decoder branches sharing one parameter set. The upper branch
// reads concat(blurred, sharp); the lower branch reads concat(sharp, sharp).
// After every conv/deconv-resblock pair a per-stage conv turns upper features
// into per-pixel 3x3 filters that are applied to the lower features. A final
// zero-initialised conv maps the lower features to an RGB correction that is
// added to the sharp input.
template <typename T>
class ReblurNet {
 public:
  explicit ReblurNet(const ReblurNetConfig& config = {}, std::uint64_t seed = 0);

  struct Stage {
    Conv2d<T> down;
    Deconv2d<T> up;
    ResBlock<T> block;
  };

  // Inputs (n, 3, H, W), H and W divisible by 2^levels.
  BasicTensor<T> forward(const BasicTensor<T>& sharp_like, const BasicTensor<T>& blurred) const;
  BasicTensor<T> infer(const BasicTensor<T>& sharp_like, const BasicTensor<T>& blurred) const;

  ParamList<T> parameters() const;
  const ReblurNetConfig& config() const { return config_; }
  int stage_count() const { return static_cast<int>(encoder.size() + decoder.size()); }

  Conv2d<T> stem;
  std::vector<Stage> encoder;
  std::vector<Stage> decoder;
  std::vector<Conv2d<T>> filter_gen;  // one per stage, encoder first
  Conv2d<T> out;

 private:
  BasicTensor<T> run_stage(std::size_t stage, const BasicTensor<T>& x) const;

  ReblurNetConfig config_;
};

template <typename T>
BasicTensor<T> reblur_forward(const ReblurNet<T>& net, const BasicTensor<T>& sharp_like,
                              const BasicTensor<T>& blurred) {
  return net.forward(sharp_like, blurred);
}

template <typename T>
BasicTensor<T> reblurring_loss(const BasicTensor<T>& reblurred, const BasicTensor<T>& blurred) {
  return mse(reblurred, blurred);
}

}  // namespace aspdc
