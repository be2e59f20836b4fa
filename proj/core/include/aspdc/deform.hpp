#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "aspdc/layers.hpp"
#include "aspdc/tensor.hpp"

namespace aspdc {

// Read-only strided view of one image plane.
template <typename T>
struct PlaneView {
  const T* data = nullptr;
  int height = 0;
  int width = 0;
  std::ptrdiff_t row_stride = 0;
  std::ptrdiff_t col_stride = 1;

  T operator()(int y, int x) const { return data[y * row_stride + x * col_stride]; }
  bool contains(int y, int x) const { return y >= 0 && y < height && x >= 0 && x < width; }
};

template <typename T>
PlaneView<T> plane_of(const BasicTensor<T>& t, int n, int c) {
  return {t.ptr() + t.shape().index(n, c, 0, 0), t.h(), t.w(), t.w(), 1};
}

// Value of a bilinear sample together with its partial derivatives in y and x.
template <typename T>
struct BilinearSample {
  T value = T(0);
  T d_dy = T(0);
  T d_dx = T(0);
};

// Zero-padded bilinear interpolation of the four integer neighbours of (y, x).
// Total function: any real location is accepted; neighbours outside the plane
// read as zero. Derivatives use the cell containing (y, x) (floor convention).
template <typename T>
BilinearSample<T> bilinear_with_grad(const PlaneView<T>& plane, T y, T x) {
  BilinearSample<T> s;
  if (!(y > T(-1) && y < T(plane.height) && x > T(-1) && x < T(plane.width))) return s;
  const T fy = std::floor(y);
  const T fx = std::floor(x);
  const int y0 = static_cast<int>(fy);
  const int x0 = static_cast<int>(fx);
  const T ly = y - fy;
  const T lx = x - fx;
  const T hy = T(1) - ly;
  const T hx = T(1) - lx;
  const T v00 = plane.contains(y0, x0) ? plane(y0, x0) : T(0);
  const T v01 = plane.contains(y0, x0 + 1) ? plane(y0, x0 + 1) : T(0);
  const T v10 = plane.contains(y0 + 1, x0) ? plane(y0 + 1, x0) : T(0);
  const T v11 = plane.contains(y0 + 1, x0 + 1) ? plane(y0 + 1, x0 + 1) : T(0);
  s.value = hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11;
  s.d_dy = hx * (v10 - v00) + lx * (v11 - v01);
  s.d_dx = hy * (v01 - v00) + ly * (v11 - v10);
  return s;
}

template <typename T>
T bilinear(const PlaneView<T>& plane, T y, T x) {
  return bilinear_with_grad(plane, y, x).value;
}

// Sample channel c of batch item n at fractional (y, x).
template <typename T>
T bilinear_sample(const BasicTensor<T>& input, T y, T x, int n, int c) {
  return bilinear(plane_of(input, n, c), y, x);
}

// Modulated deformable 3x3 convolution (DCNv2 semantics, one deformable group).
//   out(p) = bias + sum_k w_k * m_k(p) * sample(input, p + d*grid_k + offset_k(p))
// Stride 1 and padding = dilation, so the output keeps the input size.
// offsets: (n, 18, h, w), channel 2k = dy and 2k+1 = dx of tap k = ky*3 + kx.
// modulation: (n, 9, h, w). In zero_offset_mode offsets are ignored (may be
// undefined) and receive no gradient; modulation still applies.
template <typename T>
BasicTensor<T> deform_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             const BasicTensor<T>& offsets, const BasicTensor<T>& modulation, int dilation,
                             bool zero_offset_mode, const BasicTensor<T>& bias = BasicTensor<T>());

// One ASPDC branch: an offset/modulation generator (3x3 conv with the branch
// dilation) feeding a modulated deformable conv with the same dilation.
template <typename T>
struct DeformBranchParams {
  int dilation = 1;
  bool zero_offset = false;
  // Zero-initialised. 27 output channels (18 offsets + 9 modulation), or 9
  // when zero_offset is set since offsets are never read.
  Conv2d<T> generator;
  BasicTensor<T> weight;  // (channels, channels, 3, 3), Xavier
  BasicTensor<T> bias;    // (1, channels, 1, 1)

  static DeformBranchParams create(int channels, int dilation, bool zero_offset, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct OffsetsAndModulation {
  BasicTensor<T> offsets;  // undefined for zero-offset branches
  BasicTensor<T> modulation;
};

// Offsets pass through unchanged; modulation goes through a sigmoid.
template <typename T>
OffsetsAndModulation<T> gen_offsets_modulation(const BasicTensor<T>& feature, const DeformBranchParams<T>& params);

// generator -> deform_conv2d. No activation; AFIM fuses raw branch responses.
template <typename T>
BasicTensor<T> deform_branch_forward(const BasicTensor<T>& feature, const DeformBranchParams<T>& params);

}  // namespace aspdc
