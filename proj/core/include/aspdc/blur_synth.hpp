#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aspdc/image.hpp"
#include "aspdc/rng.hpp"

namespace aspdc {

enum class MotionKind { global_shake, object, mixture };

std::string to_string(MotionKind kind);
MotionKind motion_kind_from_string(const std::string& name);

// Per-pixel displacement (in pixels) accumulated over the whole exposure.
struct MotionField {
  int height = 0;
  int width = 0;
  std::vector<float> vy;
  std::vector<float> vx;
  MotionKind kind = MotionKind::global_shake;
  // Human-readable generator parameters, recorded in corpus manifests.
  std::string description;

  static MotionField uniform(int height, int width, float vy, float vx);
  double max_magnitude() const;
  std::size_t size() const { return vy.size(); }
};

// Random field of the given kind with magnitudes bounded by max_magnitude.
MotionField random_motion_field(int height, int width, MotionKind kind, double max_magnitude, Rng& rng);

// Exposure-time fractions of `frames` uniform timestamps, centred on zero:
// t_k = k / (frames - 1) - 1/2 (a single frame sits at t = 0).
std::vector<double> exposure_times(int frames);

// Frame k samples the sharp image at p + t_k * v(p) with zero-padded
// bilinear interpolation.
std::vector<Image> warp_frames(const Image& sharp, const MotionField& field, int frames);

// Average of linear frames followed by the camera response g(x) = x^(1/gamma).
Image blur_temporal(std::span<const Image> frames, double crf_gamma = 1.0);
Image blur_temporal(const Image& sharp, const MotionField& field, int frames = 15, double crf_gamma = 1.0);

// Spatially varying blur operator: for every pixel a normalised footprint of
// (dy, dx, weight) taps. Taps that fall outside the image read the nearest
// border pixel.
class SparseKernelMatrix {
 public:
  struct Entry {
    int dy = 0;
    int dx = 0;
    float weight = 0.0f;
  };

  // Throws ContractError unless every footprint has non-negative weights
  // summing to 1 within 1e-6.
  SparseKernelMatrix(int height, int width, std::vector<std::vector<Entry>> footprints);

  static SparseKernelMatrix identity(int height, int width);
  static SparseKernelMatrix box3x3(int height, int width);
  // Line-segment kernels along each pixel's motion: `samples` points spread
  // uniformly over t in [-1/2, 1/2], bilinearly splatted onto the grid.
  // samples <= 0 picks 4 points per pixel of displacement (at least 15).
  static SparseKernelMatrix from_motion(const MotionField& field, int samples = 0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::span<const Entry> footprint(int y, int x) const;

 private:
  int height_;
  int width_;
  std::vector<std::size_t> starts_;
  std::vector<Entry> entries_;
};

// I_b = I_s (*) k + n, with zero-mean Gaussian noise of std noise_sigma.
// rng is only used when noise_sigma > 0.
Image blur_kernel_matrix(const Image& sharp, const SparseKernelMatrix& kernels, double noise_sigma = 0.0,
                         Rng* rng = nullptr);

// Procedural sharp content: gradient background, textured polygons and
// glyph-like stroke patterns.
Image procedural_image(int height, int width, Rng& rng);

struct CorpusConfig {
  std::uint64_t seed = 1;
  int count = 16;
  int size = 64;
  int frames = 15;
  double crf_gamma = 1.0;
  double noise_sigma = 0.0;
  double max_motion = 12.0;
};

struct CorpusPair {
  std::string name;
  Image blurred;
  Image sharp;
};

// One blurred/sharp pair, generated from its own derived seed.
CorpusPair make_pair(const CorpusConfig& config, int index, std::string* motion_description = nullptr);

// Writes blur_####.png / sharp_####.png and manifest.txt into `dir`.
void make_corpus(const CorpusConfig& config, const std::filesystem::path& dir);

// Reads a corpus written by make_corpus (pairs in manifest order).
std::vector<CorpusPair> load_corpus(const std::filesystem::path& dir);

}  // namespace aspdc
