#pragma once

// Internal kernel helpers shared by the op implementations. Not installed.

#include <Eigen/Core>

#include <algorithm>
#include <initializer_list>
#include <string>
#include <vector>

#include "aspdc/tensor.hpp"

namespace aspdc::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C (m x n) = op(A) * op(B), optionally accumulating into C. Row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  Eigen::Map<RowMat<T>> cm(c, m, n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      cm.noalias() += lhs * rhs;
    } else {
      cm.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) {
    run(Eigen::Map<const RowMat<T>>(a, m, k), Eigen::Map<const RowMat<T>>(b, k, n));
  } else if (!trans_a && trans_b) {
    run(Eigen::Map<const RowMat<T>>(a, m, k), Eigen::Map<const RowMat<T>>(b, n, k).transpose());
  } else if (trans_a && !trans_b) {
    run(Eigen::Map<const RowMat<T>>(a, k, m).transpose(), Eigen::Map<const RowMat<T>>(b, k, n));
  } else {
    run(Eigen::Map<const RowMat<T>>(a, k, m).transpose(), Eigen::Map<const RowMat<T>>(b, n, k).transpose());
  }
}

struct ConvGeom {
  int c = 0;
  int h = 0;
  int w = 0;
  int kh = 0;
  int kw = 0;
  int stride = 1;
  int pad = 0;
  int dil = 1;
  int oh = 0;
  int ow = 0;

  int rows() const { return c * kh * kw; }
  int cols() const { return oh * ow; }
};

inline int conv_out_size(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// col[(ci*kh*kw + ky*kw + kx), (oy*ow + ox)] = x[ci, oy*s - p + ky*d, ox*s - p + kx*d], zero outside.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int cols = g.cols();
  for (int ci = 0; ci < g.c; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = col + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * cols;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back into x (accumulating).
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  const int cols = g.cols();
  for (int ci = 0; ci < g.c; ++ci) {
    T* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = col + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * cols;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.ow;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
bool any_requires_grad(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!GradTape<T>::current().recording()) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Validates the forward result and, when any input requires grad, records the op.
template <typename T>
void finish(const char* op, BasicTensor<T>& out, std::initializer_list<const BasicTensor<T>*> inputs,
            typename GradTape<T>::BackwardFn fn) {
  check_finite(*out.impl(), op);
  if (!any_requires_grad<T>(inputs)) return;
  typename GradTape<T>::Record rec;
  rec.op = op;
  for (const auto* t : inputs) {
    rec.inputs.push_back(t != nullptr && t->defined() ? t->impl() : nullptr);
  }
  out.set_requires_grad(true);
  rec.output = out.impl();
  rec.backward = std::move(fn);
  GradTape<T>::current().push(std::move(rec));
}

// Gradient buffer of an input if it participates in differentiation, else null.
template <typename T>
T* grad_of(const std::shared_ptr<TensorImpl<T>>& p) {
  if (!p || !p->requires_grad) return nullptr;
  return p->grad_buffer();
}

inline std::string shapes_msg(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str();
}

}  // namespace aspdc::detail
