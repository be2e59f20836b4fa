#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "aspdc/deform.hpp"
#include "aspdc/tensor.hpp"

namespace aspdc {

// H x W x 3 interleaved RGB floats, nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  PlaneView<float> channel(int c) const { return {pixels.data() + c, height, width, width * 3, 3}; }
  bool same_size(const Image& o) const { return height == o.height && width == o.width; }
};

// Float -> 8-bit: clamp to [0, 1], scale by 255, round half away from zero.
std::uint8_t quantize(float v);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
// Single-channel 8-bit PNG of an h x w plane (values clamped to [0, 1]).
void write_png_gray(const std::filesystem::path& path, std::span<const float> values, int height, int width);

// Stack images (all the same size) into an (n, 3, H, W) tensor.
Tensor to_tensor(std::span<const Image> images);
Tensor to_tensor(const Image& image);
Image from_tensor(const Tensor& t, int index = 0);

Image crop(const Image& image, int y, int x, int height, int width);
// Reflect-pad bottom/right so both sides become multiples of `multiple`.
Image reflect_pad_to_multiple(const Image& image, int multiple);

}  // namespace aspdc
