#include "aspdc/ops.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace aspdc {

using detail::ConvGeom;
using detail::finish;
using detail::gemm;
using detail::grad_of;
using detail::shapes_msg;

template <typename T>
using Impls = std::vector<std::shared_ptr<detail::TensorImpl<T>>>;

namespace {

template <typename T>
void check_same(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError(shapes_msg(op, a.shape(), b.shape()));
}

template <typename T>
void check_bias(const char* op, const BasicTensor<T>& bias, int channels) {
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(channels)) {
    throw DimensionError(std::string(op) + ": bias " + bias.shape().str() + " does not match " +
                         std::to_string(channels) + " output channels");
  }
}

template <typename T>
void add_bias(T* out, const T* bias, int n, int c, std::size_t plane) {
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      T* p = out + (static_cast<std::size_t>(ni) * c + ci) * plane;
      const T b = bias[ci];
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  }
}

template <typename T>
void bias_grad(T* gb, const T* go, int n, int c, std::size_t plane) {
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const T* p = go + (static_cast<std::size_t>(ni) * c + ci) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    }
    gb[ci] += static_cast<T>(acc);
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      int stride, int padding, int dilation) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws.c != is.c) {
    throw DimensionError(shapes_msg("conv2d", is, ws) + " (input channels must equal weight c_in)");
  }
  if (stride < 1 || dilation < 1 || padding < 0) throw ContractError("conv2d: invalid stride/padding/dilation");
  check_bias("conv2d", bias, ws.n);

  ConvGeom g{is.c, is.h, is.w, ws.h, ws.w, stride, padding, dilation, 0, 0};
  g.oh = detail::conv_out_size(is.h, ws.h, stride, padding, dilation);
  g.ow = detail::conv_out_size(is.w, ws.w, stride, padding, dilation);
  if (g.oh <= 0 || g.ow <= 0) throw DimensionError(shapes_msg("conv2d", is, ws) + " (empty output)");

  const int cout = ws.n;
  const int rows = g.rows();
  const int cols = g.cols();
  BasicTensor<T> out(Shape{is.n, cout, g.oh, g.ow});
  std::vector<T> col(static_cast<std::size_t>(rows) * cols);
  const std::size_t in_stride = static_cast<std::size_t>(is.c) * is.h * is.w;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * cols;
  for (int ni = 0; ni < is.n; ++ni) {
    detail::im2col(input.ptr() + ni * in_stride, g, col.data());
    gemm(false, false, cout, cols, rows, weight.ptr(), col.data(), out.ptr() + ni * out_stride, false);
  }
  if (bias.defined()) add_bias(out.ptr(), bias.ptr(), is.n, cout, out.shape().plane());

  const int n = is.n;
  finish<T>("conv2d", out, {&input, &weight, &bias}, [=](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* gx = grad_of(in[0]);
    T* gw = grad_of(in[1]);
    T* gb = grad_of(in[2]);
    const T* go = o.grad.data();
    std::vector<T> buf(static_cast<std::size_t>(rows) * cols);
    for (int ni = 0; ni < n; ++ni) {
      const T* gon = go + ni * out_stride;
      if (gw != nullptr) {
        detail::im2col(in[0]->data.data() + ni * in_stride, g, buf.data());
        gemm(false, true, cout, rows, cols, gon, buf.data(), gw, true);
      }
      if (gx != nullptr) {
        gemm(true, false, rows, cols, cout, in[1]->data.data(), gon, buf.data(), false);
        detail::col2im_add(buf.data(), g, gx + ni * in_stride);
      }
    }
    if (gb != nullptr) bias_grad(gb, go, n, cout, static_cast<std::size_t>(cols));
  });
  return out;
}

template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                        int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws.n != is.c) {
    throw DimensionError(shapes_msg("deconv2d", is, ws) + " (input channels must equal weight c_in)");
  }
  if (stride < 1 || padding < 0) throw ContractError("deconv2d: invalid stride/padding");
  const int cout = ws.c;
  check_bias("deconv2d", bias, cout);

  // The adjoint conv geometry: a conv over the (h*s, w*s) output must land on (h, w).
  ConvGeom g{cout, is.h * stride, is.w * stride, ws.h, ws.w, stride, padding, 1, is.h, is.w};
  if (detail::conv_out_size(g.h, g.kh, stride, padding, 1) != is.h ||
      detail::conv_out_size(g.w, g.kw, stride, padding, 1) != is.w) {
    throw DimensionError(shapes_msg("deconv2d", is, ws) + " (kernel/padding cannot produce input*stride output)");
  }
  const int rows = g.rows();
  const int cols = g.cols();
  const int cin = is.c;
  BasicTensor<T> out(Shape{is.n, cout, g.h, g.w});
  std::vector<T> col(static_cast<std::size_t>(rows) * cols);
  const std::size_t in_stride = static_cast<std::size_t>(cin) * cols;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * g.h * g.w;
  for (int ni = 0; ni < is.n; ++ni) {
    gemm(true, false, rows, cols, cin, weight.ptr(), input.ptr() + ni * in_stride, col.data(), false);
    detail::col2im_add(col.data(), g, out.ptr() + ni * out_stride);
  }
  if (bias.defined()) add_bias(out.ptr(), bias.ptr(), is.n, cout, out.shape().plane());

  const int n = is.n;
  finish<T>("deconv2d", out, {&input, &weight, &bias}, [=](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* gx = grad_of(in[0]);
    T* gw = grad_of(in[1]);
    T* gb = grad_of(in[2]);
    const T* go = o.grad.data();
    std::vector<T> buf(static_cast<std::size_t>(rows) * cols);
    for (int ni = 0; ni < n; ++ni) {
      if (gx == nullptr && gw == nullptr) break;
      // im2col of the output gradient is the forward conv2d input of the adjoint.
      detail::im2col(go + ni * out_stride, g, buf.data());
      if (gx != nullptr) gemm(false, false, cin, cols, rows, in[1]->data.data(), buf.data(), gx + ni * in_stride, true);
      if (gw != nullptr) gemm(false, true, cin, rows, cols, in[0]->data.data() + ni * in_stride, buf.data(), gw, true);
    }
    if (gb != nullptr) bias_grad(gb, go, n, cout, static_cast<std::size_t>(g.h) * g.w);
  });
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (std::size_t i = 0; i < x.numel(); ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
  finish<T>("relu", out, {&x}, [](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* gx = grad_of(in[0]);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < o.data.size(); ++i) {
      if (o.data[i] > T(0)) gx[i] += o.grad[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (std::size_t i = 0; i < x.numel(); ++i) op[i] = T(1) / (T(1) + std::exp(-xp[i]));
  finish<T>("sigmoid", out, {&x}, [](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* gx = grad_of(in[0]);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < o.data.size(); ++i) {
      const T s = o.data[i];
      gx[i] += o.grad[i] * s * (T(1) - s);
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_same("add", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  finish<T>("add", out, {&a, &b}, [](const Impls<T>& in, detail::TensorImpl<T>& o) {
    for (int k = 0; k < 2; ++k) {
      T* g = grad_of(in[k]);
      if (g == nullptr) continue;
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_same("sub", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];
  finish<T>("sub", out, {&a, &b}, [](const Impls<T>& in, detail::TensorImpl<T>& o) {
    if (T* ga = grad_of(in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    }
    if (T* gb = grad_of(in[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_same("mul", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  finish<T>("mul", out, {&a, &b}, [](const Impls<T>& in, detail::TensorImpl<T>& o) {
    if (T* ga = grad_of(in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * in[1]->data[i];
    }
    if (T* gb = grad_of(in[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * in[0]->data[i];
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor) {
  BasicTensor<T> out(x.shape());
  const T f = static_cast<T>(factor);
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = x.ptr()[i] * f;
  finish<T>("scale", out, {&x}, [f](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* gx = grad_of(in[0]);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * f;
  });
  return out;
}

template <typename T>
BasicTensor<T> mul_channel_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& f) {
  const Shape& as = a.shape();
  const Shape& fs = f.shape();
  if (as.c != 1 || as.n != fs.n || as.h != fs.h || as.w != fs.w) {
    throw DimensionError(shapes_msg("mul_channel_broadcast", as, fs));
  }
  BasicTensor<T> out(fs);
  const std::size_t plane = fs.plane();
  for (int ni = 0; ni < fs.n; ++ni) {
    const T* ap = a.ptr() + ni * plane;
    for (int ci = 0; ci < fs.c; ++ci) {
      const std::size_t off = (static_cast<std::size_t>(ni) * fs.c + ci) * plane;
      for (std::size_t p = 0; p < plane; ++p) out.ptr()[off + p] = ap[p] * f.ptr()[off + p];
    }
  }
  finish<T>("mul_channel_broadcast", out, {&a, &f}, [fs, plane](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* ga = grad_of(in[0]);
    T* gf = grad_of(in[1]);
    for (int ni = 0; ni < fs.n; ++ni) {
      const T* ap = in[0]->data.data() + ni * plane;
      for (int ci = 0; ci < fs.c; ++ci) {
        const std::size_t off = (static_cast<std::size_t>(ni) * fs.c + ci) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const T go = o.grad[off + p];
          if (ga != nullptr) ga[ni * plane + p] += go * in[1]->data[off + p];
          if (gf != nullptr) gf[off + p] += go * ap[p];
        }
      }
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  int total = 0;
  std::vector<int> sizes;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) throw DimensionError(shapes_msg("concat_channels", s0, s));
    sizes.push_back(s.c);
    total += s.c;
  }
  BasicTensor<T> out(Shape{s0.n, total, s0.h, s0.w});
  const std::size_t plane = s0.plane();
  int c_off = 0;
  for (const auto& p : parts) {
    for (int ni = 0; ni < s0.n; ++ni) {
      const T* src = p.ptr() + static_cast<std::size_t>(ni) * p.c() * plane;
      T* dst = out.ptr() + (static_cast<std::size_t>(ni) * total + c_off) * plane;
      std::copy(src, src + p.c() * plane, dst);
    }
    c_off += p.c();
  }

  check_finite(*out.impl(), "concat_channels");
  bool record = false;
  for (const auto& p : parts) record = record || detail::any_requires_grad<T>({&p});
  if (record) {
    typename GradTape<T>::Record rec;
    rec.op = "concat_channels";
    for (const auto& p : parts) rec.inputs.push_back(p.impl());
    out.set_requires_grad(true);
    rec.output = out.impl();
    rec.backward = [sizes, total, n = s0.n, plane](const Impls<T>& in, detail::TensorImpl<T>& o) {
      int off = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        T* g = grad_of(in[k]);
        if (g != nullptr) {
          for (int ni = 0; ni < n; ++ni) {
            const T* src = o.grad.data() + (static_cast<std::size_t>(ni) * total + off) * plane;
            T* dst = g + static_cast<std::size_t>(ni) * sizes[k] * plane;
            for (std::size_t i = 0; i < sizes[k] * plane; ++i) dst[i] += src[i];
          }
        }
        off += sizes[k];
      }
    };
    GradTape<T>::current().push(std::move(rec));
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int begin, int count) {
  const Shape& s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + s.str());
  }
  BasicTensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  for (int ni = 0; ni < s.n; ++ni) {
    const T* src = x.ptr() + (static_cast<std::size_t>(ni) * s.c + begin) * plane;
    std::copy(src, src + count * plane, out.ptr() + static_cast<std::size_t>(ni) * count * plane);
  }
  finish<T>("slice_channels", out, {&x}, [s, begin, count, plane](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* gx = grad_of(in[0]);
    if (gx == nullptr) return;
    for (int ni = 0; ni < s.n; ++ni) {
      T* dst = gx + (static_cast<std::size_t>(ni) * s.c + begin) * plane;
      const T* src = o.grad.data() + static_cast<std::size_t>(ni) * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& x, std::span<const int> sizes) {
  int total = 0;
  for (int s : sizes) total += s;
  if (total != x.c()) {
    throw DimensionError("split_channels: sizes sum to " + std::to_string(total) + " but tensor is " + x.shape().str());
  }
  std::vector<BasicTensor<T>> parts;
  int off = 0;
  for (int s : sizes) {
    parts.push_back(slice_channels(x, off, s));
    off += s;
  }
  return parts;
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& x) {
  const Shape& s = x.shape();
  BasicTensor<T> out(s);
  const std::size_t plane = s.plane();
  for (int ni = 0; ni < s.n; ++ni) {
    const T* xp = x.ptr() + static_cast<std::size_t>(ni) * s.c * plane;
    T* op = out.ptr() + static_cast<std::size_t>(ni) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = xp[p];
      for (int ci = 1; ci < s.c; ++ci) mx = std::max(mx, xp[ci * plane + p]);
      double total = 0.0;
      for (int ci = 0; ci < s.c; ++ci) {
        const T e = std::exp(xp[ci * plane + p] - mx);
        op[ci * plane + p] = e;
        total += e;
      }
      const T inv = static_cast<T>(1.0 / total);
      for (int ci = 0; ci < s.c; ++ci) op[ci * plane + p] *= inv;
    }
  }
  finish<T>("softmax_channels", out, {&x}, [s, plane](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* gx = grad_of(in[0]);
    if (gx == nullptr) return;
    for (int ni = 0; ni < s.n; ++ni) {
      const std::size_t base = static_cast<std::size_t>(ni) * s.c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (int ci = 0; ci < s.c; ++ci) dot += o.grad[base + ci * plane + p] * o.data[base + ci * plane + p];
        for (int ci = 0; ci < s.c; ++ci) {
          const std::size_t i = base + ci * plane + p;
          gx[i] += o.data[i] * (o.grad[i] - static_cast<T>(dot));
        }
      }
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc));
  finish<T>("sum", out, {&x}, [](const Impls<T>& in, detail::TensorImpl<T>& o) {
    T* gx = grad_of(in[0]);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < in[0]->data.size(); ++i) gx[i] += o.grad[0];
  });
  return out;
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_same("mse", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.ptr()[i]) - static_cast<double>(b.ptr()[i]);
    acc += d * d;
  }
  const double count = static_cast<double>(a.numel());
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc / count));
  finish<T>("mse", out, {&a, &b}, [count](const Impls<T>& in, detail::TensorImpl<T>& o) {
    const T k = static_cast<T>(2.0 * static_cast<double>(o.grad[0]) / count);
    T* ga = grad_of(in[0]);
    T* gb = grad_of(in[1]);
    for (std::size_t i = 0; i < in[0]->data.size(); ++i) {
      const T d = in[0]->data[i] - in[1]->data[i];
      if (ga != nullptr) ga[i] += k * d;
      if (gb != nullptr) gb[i] -= k * d;
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> clamp01(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = std::clamp(x.ptr()[i], T(0), T(1));
  return out;
}

#define ASPDC_INSTANTIATE_OPS(T)                                                                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, int,    \
                                 int);                                                                             \
  template BasicTensor<T> deconv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, int); \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                             \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                                    \
  template BasicTensor<T> mul_channel_broadcast(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>>);                                        \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, int, int);                                         \
  template std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>&, std::span<const int>);                \
  template BasicTensor<T> softmax_channels(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                              \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> clamp01(const BasicTensor<T>&);

ASPDC_INSTANTIATE_OPS(float)
ASPDC_INSTANTIATE_OPS(double)

#undef ASPDC_INSTANTIATE_OPS

}  // namespace aspdc
