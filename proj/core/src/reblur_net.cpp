#include "aspdc/reblur_net.hpp"

#include "aspdc/ops.hpp"
#include "kernels.hpp"

namespace aspdc {

template <typename T>
BasicTensor<T> apply_dynamic_filter(const BasicTensor<T>& features, const BasicTensor<T>& filters) {
  const Shape& fs = features.shape();
  const Shape& ks = filters.shape();
  if (ks.n != fs.n || ks.c != 9 || ks.h != fs.h || ks.w != fs.w) {
    throw DimensionError(detail::shapes_msg("apply_dynamic_filter", fs, ks) + " (filters must be (n, 9, h, w))");
  }
  const int h = fs.h;
  const int w = fs.w;
  const std::size_t plane = fs.plane();
  BasicTensor<T> out(fs);
  for (int ni = 0; ni < fs.n; ++ni) {
    const T* f = filters.ptr() + static_cast<std::size_t>(ni) * 9 * plane;
    for (int ci = 0; ci < fs.c; ++ci) {
      const T* x = features.ptr() + (static_cast<std::size_t>(ni) * fs.c + ci) * plane;
      T* o = out.ptr() + (static_cast<std::size_t>(ni) * fs.c + ci) * plane;
      for (int k = 0; k < 9; ++k) {
        const int dy = k / 3 - 1;
        const int dx = k % 3 - 1;
        const T* fk = f + k * plane;
        for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
          const T* xr = x + (y + dy) * w;
          for (int xx = std::max(0, -dx); xx < std::min(w, w - dx); ++xx) {
            o[y * w + xx] += fk[y * w + xx] * xr[xx + dx];
          }
        }
      }
    }
  }
  detail::finish<T>("apply_dynamic_filter", out, {&features, &filters},
                    [fs, h, w, plane](const std::vector<std::shared_ptr<detail::TensorImpl<T>>>& in,
                                      detail::TensorImpl<T>& o) {
                      T* gx = detail::grad_of(in[0]);
                      T* gf = detail::grad_of(in[1]);
                      for (int ni = 0; ni < fs.n; ++ni) {
                        const T* f = in[1]->data.data() + static_cast<std::size_t>(ni) * 9 * plane;
                        for (int ci = 0; ci < fs.c; ++ci) {
                          const std::size_t off = (static_cast<std::size_t>(ni) * fs.c + ci) * plane;
                          const T* x = in[0]->data.data() + off;
                          const T* go = o.grad.data() + off;
                          for (int k = 0; k < 9; ++k) {
                            const int dy = k / 3 - 1;
                            const int dx = k % 3 - 1;
                            const T* fk = f + k * plane;
                            T* gfk = gf != nullptr ? gf + static_cast<std::size_t>(ni) * 9 * plane + k * plane : nullptr;
                            for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
                              for (int xx = std::max(0, -dx); xx < std::min(w, w - dx); ++xx) {
                                const int p = y * w + xx;
                                const int q = (y + dy) * w + xx + dx;
                                if (gx != nullptr) gx[off + q] += go[p] * fk[p];
                                if (gfk != nullptr) gfk[p] += go[p] * x[q];
                              }
                            }
                          }
                        }
                      }
                    });
  return out;
}

template <typename T>
ReblurNet<T>::ReblurNet(const ReblurNetConfig& config, std::uint64_t seed) : config_(config) {
  if (config.base_width < 1 || config.levels < 1) throw ConfigError("reblur net needs positive width and levels");
  Rng rng(seed);
  const int c = config.base_width;
  stem = Conv2d<T>(6, c, 3, 1, 1, 1, rng);
  for (int i = 0; i < config.levels; ++i) {
    const int cin = c << i;
    const int cout = c << (i + 1);
    Stage s;
    s.down = Conv2d<T>(cin, cout, 3, 2, 1, 1, rng);
    s.block = ResBlock<T>(cout, rng);
    encoder.push_back(std::move(s));
  }
  for (int i = 0; i < config.levels; ++i) {
    const int cin = c << (config.levels - i);
    const int cout = c << (config.levels - i - 1);
    Stage s;
    s.up = Deconv2d<T>(cin, cout, rng);
    s.block = ResBlock<T>(cout, rng);
    decoder.push_back(std::move(s));
  }
  auto add_filter_gen = [&](int width) {
    Conv2d<T> g(width, 9, 3, 1, 1, 1, rng);
    // Centre tap bias of one: filters start near the identity kernel.
    g.bias.data()[4] = T(1);
    filter_gen.push_back(std::move(g));
  };
  for (int i = 0; i < config.levels; ++i) add_filter_gen(c << (i + 1));
  for (int i = 0; i < config.levels; ++i) add_filter_gen(c << (config.levels - i - 1));
  out = Conv2d<T>(c, 3, 3, 1, 1, 1, rng);
  out.zero_init();
}

template <typename T>
BasicTensor<T> ReblurNet<T>::run_stage(std::size_t stage, const BasicTensor<T>& x) const {
  if (stage < encoder.size()) {
    const auto& s = encoder[stage];
    return s.block(relu(s.down(x)));
  }
  const auto& s = decoder[stage - encoder.size()];
  return s.block(relu(s.up(x)));
}

template <typename T>
BasicTensor<T> ReblurNet<T>::forward(const BasicTensor<T>& sharp_like, const BasicTensor<T>& blurred) const {
  const Shape& s = sharp_like.shape();
  if (s != blurred.shape()) throw DimensionError(detail::shapes_msg("reblur_forward", s, blurred.shape()));
  const int div = 1 << config_.levels;
  if (s.c != 3 || s.h == 0 || s.w == 0 || s.h % div != 0 || s.w % div != 0) {
    throw DimensionError("reblur_forward: expected (n, 3, H, W) with H, W divisible by " + std::to_string(div) +
                         ", got " + s.str());
  }
  auto upper = relu(stem(concat_channels<T>({blurred, sharp_like})));
  auto lower = relu(stem(concat_channels<T>({sharp_like, sharp_like})));
  for (std::size_t i = 0; i < static_cast<std::size_t>(stage_count()); ++i) {
    upper = run_stage(i, upper);
    lower = run_stage(i, lower);
    lower = apply_dynamic_filter(lower, filter_gen[i](upper));
  }
  return add(sharp_like, out(lower));
}

template <typename T>
BasicTensor<T> ReblurNet<T>::infer(const BasicTensor<T>& sharp_like, const BasicTensor<T>& blurred) const {
  NoGradGuard<T> guard;
  return clamp01(forward(sharp_like, blurred));
}

template <typename T>
ParamList<T> ReblurNet<T>::parameters() const {
  ParamList<T> p;
  stem.collect(p, "stem");
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    encoder[i].down.collect(p, "enc" + std::to_string(i) + ".down");
    encoder[i].block.collect(p, "enc" + std::to_string(i) + ".res");
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    decoder[i].up.collect(p, "dec" + std::to_string(i) + ".up");
    decoder[i].block.collect(p, "dec" + std::to_string(i) + ".res");
  }
  for (std::size_t i = 0; i < filter_gen.size(); ++i) filter_gen[i].collect(p, "filter" + std::to_string(i));
  out.collect(p, "out");
  return p;
}

template BasicTensor<float> apply_dynamic_filter(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> apply_dynamic_filter(const BasicTensor<double>&, const BasicTensor<double>&);
template class ReblurNet<float>;
template class ReblurNet<double>;

}  // namespace aspdc
