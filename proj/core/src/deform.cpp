#include "aspdc/deform.hpp"

#include <array>
#include <vector>

#include "kernels.hpp"

namespace aspdc {

namespace {

constexpr int kTaps = 9;

// Bilinear footprint of one sampling location, shared by every input channel.
template <typename T>
struct Tap {
  std::array<int, 4> idx{};
  std::array<T, 4> wt{};
  std::array<T, 4> dwy{};
  std::array<T, 4> dwx{};
};

template <typename T>
Tap<T> make_tap(int height, int width, T y, T x) {
  Tap<T> tap;
  if (!(y > T(-1) && y < T(height) && x > T(-1) && x < T(width))) return tap;
  const T fy = std::floor(y);
  const T fx = std::floor(x);
  const int y0 = static_cast<int>(fy);
  const int x0 = static_cast<int>(fx);
  const T ly = y - fy;
  const T lx = x - fx;
  const T hy = T(1) - ly;
  const T hx = T(1) - lx;
  const std::array<int, 4> ys{y0, y0, y0 + 1, y0 + 1};
  const std::array<int, 4> xs{x0, x0 + 1, x0, x0 + 1};
  const std::array<T, 4> wt{hy * hx, hy * lx, ly * hx, ly * lx};
  const std::array<T, 4> dwy{-hx, -lx, hx, lx};
  const std::array<T, 4> dwx{-hy, hy, -ly, ly};
  for (int j = 0; j < 4; ++j) {
    if (ys[j] >= 0 && ys[j] < height && xs[j] >= 0 && xs[j] < width) {
      tap.idx[j] = ys[j] * width + xs[j];
      tap.wt[j] = wt[j];
      tap.dwy[j] = dwy[j];
      tap.dwx[j] = dwx[j];
    }
  }
  return tap;
}

// Footprints for every (tap k, pixel p) of batch item n, laid out k-major.
template <typename T>
std::vector<Tap<T>> build_taps(const Shape& is, const T* offsets, int dilation, bool zero_offset) {
  const int h = is.h;
  const int w = is.w;
  const std::size_t plane = is.plane();
  std::vector<Tap<T>> taps(kTaps * plane);
  for (int k = 0; k < kTaps; ++k) {
    const int ky = k / 3;
    const int kx = k % 3;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        T sy = static_cast<T>(y - dilation + ky * dilation);
        T sx = static_cast<T>(x - dilation + kx * dilation);
        if (!zero_offset) {
          sy += offsets[(2 * k) * plane + p];
          sx += offsets[(2 * k + 1) * plane + p];
        }
        taps[k * plane + p] = make_tap<T>(h, w, sy, sx);
      }
    }
  }
  return taps;
}

template <typename T>
inline T tap_value(const Tap<T>& t, const T* plane) {
  return t.wt[0] * plane[t.idx[0]] + t.wt[1] * plane[t.idx[1]] + t.wt[2] * plane[t.idx[2]] +
         t.wt[3] * plane[t.idx[3]];
}

// col[(ci*9 + k), p] = m_k(p) * sample_ci(k, p)
template <typename T>
void deform_im2col(const T* x, int channels, std::size_t plane, const std::vector<Tap<T>>& taps, const T* mod,
                   T* col) {
  for (int ci = 0; ci < channels; ++ci) {
    const T* xp = x + ci * plane;
    for (int k = 0; k < kTaps; ++k) {
      T* row = col + (static_cast<std::size_t>(ci) * kTaps + k) * plane;
      const Tap<T>* tk = taps.data() + k * plane;
      const T* mk = mod + k * plane;
      for (std::size_t p = 0; p < plane; ++p) row[p] = mk[p] * tap_value(tk[p], xp);
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> deform_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             const BasicTensor<T>& offsets, const BasicTensor<T>& modulation, int dilation,
                             bool zero_offset_mode, const BasicTensor<T>& bias) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h != 3 || ws.w != 3 || ws.c != is.c) {
    throw DimensionError(detail::shapes_msg("deform_conv2d", is, ws) + " (weight must be (c_out, c_in, 3, 3))");
  }
  if (dilation < 1) throw ContractError("deform_conv2d: dilation must be >= 1");
  const Shape mod_expected{is.n, kTaps, is.h, is.w};
  if (!modulation.defined() || modulation.shape() != mod_expected) {
    throw DimensionError(detail::shapes_msg("deform_conv2d modulation", modulation.defined() ? modulation.shape() : Shape{},
                                            mod_expected));
  }
  if (!zero_offset_mode) {
    const Shape off_expected{is.n, 2 * kTaps, is.h, is.w};
    if (!offsets.defined() || offsets.shape() != off_expected) {
      throw DimensionError(detail::shapes_msg("deform_conv2d offsets", offsets.defined() ? offsets.shape() : Shape{},
                                              off_expected));
    }
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(ws.n)) {
    throw DimensionError(detail::shapes_msg("deform_conv2d bias", bias.shape(), ws));
  }

  const int cin = is.c;
  const int cout = ws.n;
  const std::size_t plane = is.plane();
  const int rows = cin * kTaps;
  const int cols = static_cast<int>(plane);
  const std::size_t in_stride = static_cast<std::size_t>(cin) * plane;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * plane;
  const std::size_t off_stride = 2 * kTaps * plane;
  const std::size_t mod_stride = kTaps * plane;

  BasicTensor<T> out(Shape{is.n, cout, is.h, is.w});
  std::vector<T> col(static_cast<std::size_t>(rows) * cols);
  for (int ni = 0; ni < is.n; ++ni) {
    const T* off = zero_offset_mode ? nullptr : offsets.ptr() + ni * off_stride;
    const auto taps = build_taps<T>(is, off, dilation, zero_offset_mode);
    deform_im2col(input.ptr() + ni * in_stride, cin, plane, taps, modulation.ptr() + ni * mod_stride, col.data());
    detail::gemm(false, false, cout, cols, rows, weight.ptr(), col.data(), out.ptr() + ni * out_stride, false);
    if (bias.defined()) {
      for (int co = 0; co < cout; ++co) {
        T* o = out.ptr() + ni * out_stride + co * plane;
        for (std::size_t p = 0; p < plane; ++p) o[p] += bias.ptr()[co];
      }
    }
  }

  const BasicTensor<T> no_offsets;
  const BasicTensor<T>& recorded_offsets = zero_offset_mode ? no_offsets : offsets;
  detail::finish<T>(
      "deform_conv2d", out, {&input, &weight, &recorded_offsets, &modulation, &bias},
      [=](const std::vector<std::shared_ptr<detail::TensorImpl<T>>>& in, detail::TensorImpl<T>& o) {
        T* gx = detail::grad_of(in[0]);
        T* gw = detail::grad_of(in[1]);
        T* goff = detail::grad_of(in[2]);
        T* gmod = detail::grad_of(in[3]);
        T* gb = detail::grad_of(in[4]);
        const T* x = in[0]->data.data();
        const T* w = in[1]->data.data();
        const T* mod = in[3]->data.data();
        const T* go = o.grad.data();
        std::vector<T> col_buf(static_cast<std::size_t>(rows) * cols);
        std::vector<T> dcol(static_cast<std::size_t>(rows) * cols);
        for (int ni = 0; ni < is.n; ++ni) {
          const T* off = zero_offset_mode ? nullptr : in[2]->data.data() + ni * off_stride;
          const auto taps = build_taps<T>(is, off, dilation, zero_offset_mode);
          const T* xn = x + ni * in_stride;
          const T* modn = mod + ni * mod_stride;
          const T* gon = go + ni * out_stride;
          if (gw != nullptr) {
            deform_im2col(xn, cin, plane, taps, modn, col_buf.data());
            detail::gemm(false, true, cout, rows, cols, gon, col_buf.data(), gw, true);
          }
          if (gx == nullptr && goff == nullptr && gmod == nullptr) continue;
          detail::gemm(true, false, rows, cols, cout, w, gon, dcol.data(), false);
          for (int k = 0; k < kTaps; ++k) {
            for (std::size_t p = 0; p < plane; ++p) {
              const Tap<T>& t = taps[k * plane + p];
              const T m = modn[k * plane + p];
              double acc_mod = 0.0;
              double acc_dy = 0.0;
              double acc_dx = 0.0;
              for (int ci = 0; ci < cin; ++ci) {
                const T g = dcol[(static_cast<std::size_t>(ci) * kTaps + k) * plane + p];
                if (g == T(0)) continue;
                const T* xp = xn + ci * plane;
                if (gmod != nullptr) acc_mod += static_cast<double>(g) * tap_value(t, xp);
                const T gm = g * m;
                if (gx != nullptr) {
                  T* gxp = gx + ni * in_stride + ci * plane;
                  for (int j = 0; j < 4; ++j) gxp[t.idx[j]] += gm * t.wt[j];
                }
                if (goff != nullptr) {
                  T vy = T(0);
                  T vx = T(0);
                  for (int j = 0; j < 4; ++j) {
                    vy += t.dwy[j] * xp[t.idx[j]];
                    vx += t.dwx[j] * xp[t.idx[j]];
                  }
                  acc_dy += static_cast<double>(gm) * vy;
                  acc_dx += static_cast<double>(gm) * vx;
                }
              }
              if (gmod != nullptr) gmod[ni * mod_stride + k * plane + p] += static_cast<T>(acc_mod);
              if (goff != nullptr) {
                goff[ni * off_stride + (2 * k) * plane + p] += static_cast<T>(acc_dy);
                goff[ni * off_stride + (2 * k + 1) * plane + p] += static_cast<T>(acc_dx);
              }
            }
          }
        }
        if (gb != nullptr) {
          for (int co = 0; co < cout; ++co) {
            double acc = 0.0;
            for (int ni = 0; ni < is.n; ++ni) {
              const T* g = go + ni * out_stride + co * plane;
              for (std::size_t p = 0; p < plane; ++p) acc += g[p];
            }
            gb[co] += static_cast<T>(acc);
          }
        }
      });
  return out;
}

template <typename T>
DeformBranchParams<T> DeformBranchParams<T>::create(int channels, int dilation, bool zero_offset, Rng& rng) {
  DeformBranchParams p;
  p.dilation = dilation;
  p.zero_offset = zero_offset;
  const int gen_channels = zero_offset ? kTaps : 3 * kTaps;
  p.generator = Conv2d<T>(channels, gen_channels, 3, 1, dilation, dilation, rng);
  p.generator.zero_init();
  p.weight = xavier_normal<T>(Shape{channels, channels, 3, 3}, channels * 9, channels * 9, rng);
  p.weight.set_requires_grad();
  p.bias = BasicTensor<T>(Shape{1, channels, 1, 1});
  p.bias.set_requires_grad();
  return p;
}

template <typename T>
void DeformBranchParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  generator.collect(out, prefix + ".gen");
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
OffsetsAndModulation<T> gen_offsets_modulation(const BasicTensor<T>& feature, const DeformBranchParams<T>& params) {
  const auto raw = params.generator(feature);
  OffsetsAndModulation<T> result;
  if (params.zero_offset) {
    result.modulation = sigmoid(raw);
  } else {
    result.offsets = slice_channels(raw, 0, 2 * kTaps);
    result.modulation = sigmoid(slice_channels(raw, 2 * kTaps, kTaps));
  }
  return result;
}

template <typename T>
BasicTensor<T> deform_branch_forward(const BasicTensor<T>& feature, const DeformBranchParams<T>& params) {
  const auto om = gen_offsets_modulation(feature, params);
  return deform_conv2d(feature, params.weight, om.offsets, om.modulation, params.dilation, params.zero_offset,
                       params.bias);
}

#define ASPDC_INSTANTIATE_DEFORM(T)                                                                             \
  template BasicTensor<T> deform_conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                        const BasicTensor<T>&, int, bool, const BasicTensor<T>&);               \
  template struct DeformBranchParams<T>;                                                                        \
  template OffsetsAndModulation<T> gen_offsets_modulation(const BasicTensor<T>&, const DeformBranchParams<T>&); \
  template BasicTensor<T> deform_branch_forward(const BasicTensor<T>&, const DeformBranchParams<T>&);

ASPDC_INSTANTIATE_DEFORM(float)
ASPDC_INSTANTIATE_DEFORM(double)

#undef ASPDC_INSTANTIATE_DEFORM

}  // namespace aspdc
