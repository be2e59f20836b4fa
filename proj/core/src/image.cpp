#include "aspdc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace aspdc {

std::uint8_t quantize(float v) {
  const double scaled = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::lround(scaled));
}

Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&img, path.string().c_str()) == 0) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) == 0) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (std::size_t i = 0; i < buf.size(); ++i) out.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  return out;
}

namespace {

void write_png_raw(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes, int height, int width,
                   png_uint_32 format) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr) == 0) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), quantize);
  write_png_raw(path, bytes, image.height, image.width, PNG_FORMAT_RGB);
}

void write_png_gray(const std::filesystem::path& path, std::span<const float> values, int height, int width) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw DimensionError("write_png_gray: value count does not match " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  std::vector<std::uint8_t> bytes(values.size());
  std::transform(values.begin(), values.end(), bytes.begin(), quantize);
  write_png_raw(path, bytes, height, width, PNG_FORMAT_GRAY);
}

Tensor to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ContractError("to_tensor: no images");
  const int h = images[0].height;
  const int w = images[0].width;
  Tensor t(Shape{static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = images[n];
    if (im.height != h || im.width != w) throw DimensionError("to_tensor: images differ in size");
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = im.at(y, x, c);
      }
    }
  }
  return t;
}

Tensor to_tensor(const Image& image) { return to_tensor(std::span<const Image>(&image, 1)); }

Image from_tensor(const Tensor& t, int index) {
  if (t.c() != 3 || index < 0 || index >= t.n()) {
    throw DimensionError("from_tensor: need a 3-channel tensor with item " + std::to_string(index) + ", got " +
                         t.shape().str());
  }
  Image im(t.h(), t.w());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < t.h(); ++y) {
      for (int x = 0; x < t.w(); ++x) im.at(y, x, c) = t.at(index, c, y, x);
    }
  }
  return im;
}

Image crop(const Image& image, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || height < 0 || width < 0 || y0 + height > image.height || x0 + width > image.width) {
    throw DimensionError("crop window outside image");
  }
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    const float* src = &image.pixels[(static_cast<std::size_t>(y0 + y) * image.width + x0) * 3];
    std::copy(src, src + width * 3, &out.pixels[static_cast<std::size_t>(y) * width * 3]);
  }
  return out;
}

Image reflect_pad_to_multiple(const Image& image, int multiple) {
  const int h = (image.height + multiple - 1) / multiple * multiple;
  const int w = (image.width + multiple - 1) / multiple * multiple;
  if (h == image.height && w == image.width) return image;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
  };
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(reflect(y, image.height), reflect(x, image.width), c);
    }
  }
  return out;
}

}  // namespace aspdc
