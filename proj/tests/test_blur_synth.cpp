#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "aspdc/blur_synth.hpp"
#include "aspdc/metrics.hpp"

namespace aspdc {
namespace {

namespace fs = std::filesystem;

// Mean PSNR(blurred, sharp) of the default corpus on the reference build.
constexpr double kPinnedDefaultCorpusPsnr = 22.6876;

Image random_image(int h, int w, Rng& rng) {
  Image im(h, w);
  for (auto& v : im.pixels) v = float(rng.uniform());
  return im;
}

double mean_abs(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(double(a.pixels[i]) - b.pixels[i]);
  return s / double(a.pixels.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("aspdc_test_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(BlurSynth, ExposureTimesAreCentred) {
  const auto t = exposure_times(7);
  ASSERT_EQ(t.size(), 7u);
  EXPECT_DOUBLE_EQ(t.front(), -0.5);
  EXPECT_DOUBLE_EQ(t.back(), 0.5);
  EXPECT_DOUBLE_EQ(t[3], 0.0);
  EXPECT_EQ(exposure_times(1), std::vector<double>{0.0});
}

TEST(BlurSynth, IdenticalFramesAverageToFrame) {
  Rng rng(1);
  const Image f = random_image(5, 6, rng);
  const std::vector<Image> frames(4, f);
  const Image b = blur_temporal(frames, 1.0);
  for (std::size_t i = 0; i < f.pixels.size(); ++i) EXPECT_FLOAT_EQ(b.pixels[i], f.pixels[i]);
}

TEST(BlurSynth, BlackAndWhiteAverageToGrey) {
  const std::vector<Image> frames{Image(3, 3, 0.0f), Image(3, 3, 1.0f)};
  for (float v : blur_temporal(frames, 1.0).pixels) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(BlurSynth, ResponseCurveIsPowerLaw) {
  const std::vector<Image> frames{Image(2, 2, 0.25f)};
  for (float v : blur_temporal(frames, 2.2).pixels) EXPECT_NEAR(v, std::pow(0.25, 1.0 / 2.2), 1e-6);
  EXPECT_THROW(blur_temporal(std::vector<Image>{}, 1.0), std::exception);
}

TEST(BlurSynth, HorizontalShakeMatchesShiftAndAverage) {
  const int h = 8;
  const int w = 24;
  Image edge(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 12; x < w; ++x)
      for (int c = 0; c < 3; ++c) edge.at(y, x, c) = 1.0f;
  const auto field = MotionField::uniform(h, w, 0.0f, 6.0f);
  const Image b = blur_temporal(edge, field, 7, 1.0);
  double max_err = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 7; ++k) {
          const int sx = x + k - 3;
          acc += (sx >= 0 && sx < w) ? edge.at(y, sx, c) : 0.0;
        }
        max_err = std::max(max_err, std::abs(acc / 7.0 - b.at(y, x, c)));
      }
  EXPECT_LE(max_err, 1e-5);
  // Away from the borders the step turns into a ramp spanning the 6-pixel travel.
  int ramp = 0;
  for (int x = 3; x < w - 3; ++x) ramp += (b.at(4, x, 0) > 0.01f && b.at(4, x, 0) < 0.99f) ? 1 : 0;
  EXPECT_EQ(ramp, 6);
}

TEST(BlurSynth, ZeroMotionIsIdentityForBothModels) {
  Rng rng(2);
  const Image s = random_image(10, 12, rng);
  const auto still = MotionField::uniform(10, 12, 0.0f, 0.0f);
  const Image t = blur_temporal(s, still, 15, 1.0);
  const Image k = blur_kernel_matrix(s, SparseKernelMatrix::from_motion(still));
  for (std::size_t i = 0; i < s.pixels.size(); ++i) {
    EXPECT_EQ(t.pixels[i], s.pixels[i]);
    EXPECT_EQ(k.pixels[i], s.pixels[i]);
  }
}

TEST(BlurSynth, DeltaAndBoxKernels) {
  Rng rng(3);
  const Image s = random_image(6, 7, rng);
  const Image same = blur_kernel_matrix(s, SparseKernelMatrix::identity(6, 7));
  for (std::size_t i = 0; i < s.pixels.size(); ++i) EXPECT_EQ(same.pixels[i], s.pixels[i]);
  const Image flat(6, 7, 0.3f);
  for (float v : blur_kernel_matrix(flat, SparseKernelMatrix::box3x3(6, 7)).pixels) EXPECT_NEAR(v, 0.3f, 1e-6);
}

TEST(BlurSynth, UnnormalisedKernelIsRejected) {
  using E = SparseKernelMatrix::Entry;
  EXPECT_THROW(SparseKernelMatrix(1, 1, {{E{0, 0, 0.9f}}}), ContractError);
  EXPECT_THROW(SparseKernelMatrix(1, 1, {{E{0, 0, 1.5f}, E{0, 1, -0.5f}}}), ContractError);
  EXPECT_THROW(SparseKernelMatrix(1, 2, {{E{0, 0, 1.0f}}}), std::exception);
  EXPECT_NO_THROW(SparseKernelMatrix(1, 1, {{E{0, 0, 0.25f}, E{0, -1, 0.75f}}}));
}

TEST(BlurSynth, MotionKernelsAreNormalised) {
  Rng rng(4);
  const auto field = random_motion_field(16, 16, MotionKind::mixture, 9.0, rng);
  const auto k = SparseKernelMatrix::from_motion(field);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      double s = 0.0;
      for (const auto& e : k.footprint(y, x)) {
        EXPECT_GE(e.weight, 0.0f);
        s += e.weight;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(BlurSynth, KernelModelAgreesWithTemporalModel) {
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    const Image s = procedural_image(48, 48, rng);
    const double angle = rng.uniform(0.0, 6.283185307179586);
    const double len = rng.uniform(2.0, 10.0);
    const auto field = MotionField::uniform(48, 48, float(len * std::sin(angle)), float(len * std::cos(angle)));
    const Image t = blur_temporal(s, field, 31, 1.0);
    const Image k = blur_kernel_matrix(s, SparseKernelMatrix::from_motion(field));
    // Border rules differ (zero versus nearest), so compare the interior.
    const int m = int(std::ceil(len / 2)) + 2;
    const Image ti = crop(t, m, m, 48 - 2 * m, 48 - 2 * m);
    const Image ki = crop(k, m, m, 48 - 2 * m, 48 - 2 * m);
    double mean = 0.0;
    for (float v : ti.pixels) mean += v;
    mean /= double(ti.pixels.size());
    EXPECT_LE(mean_abs(ti, ki), 0.02 * mean) << "field " << i;
  }
}

TEST(BlurSynth, MeanIsPreservedWhenContentStaysInside) {
  Rng rng(6);
  const Image content = procedural_image(40, 40, rng);
  Image s(64, 64);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x)
      for (int c = 0; c < 3; ++c) s.at(y + 12, x + 12, c) = content.at(y, x, c);
  const Image b = blur_temporal(s, MotionField::uniform(64, 64, 3.0f, -4.0f), 15, 1.0);
  double ms = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < s.pixels.size(); ++i) {
    ms += s.pixels[i];
    mb += b.pixels[i];
  }
  EXPECT_NEAR(ms / s.pixels.size(), mb / b.pixels.size(), 1e-3);
}

TEST(BlurSynth, GlobalMeanIsPreservedForPeriodicContent) {
  // Content that is constant along the motion direction away from borders.
  Image s(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) s.at(y, x, c) = (y % 4 < 2) ? 0.8f : 0.2f;
  const Image b = blur_temporal(s, MotionField::uniform(32, 32, 0.0f, 5.0f), 15, 1.0);
  const Image si = crop(s, 0, 8, 32, 16);
  const Image bi = crop(b, 0, 8, 32, 16);
  double ms = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < si.pixels.size(); ++i) {
    ms += si.pixels[i];
    mb += bi.pixels[i];
  }
  EXPECT_NEAR(ms / si.pixels.size(), mb / bi.pixels.size(), 1e-3);
}

TEST(BlurSynth, MotionFieldsRespectBound) {
  Rng rng(7);
  for (auto kind : {MotionKind::global_shake, MotionKind::object, MotionKind::mixture}) {
    for (int i = 0; i < 5; ++i) {
      const auto f = random_motion_field(32, 40, kind, 12.0, rng);
      EXPECT_LE(f.max_magnitude(), 12.0 + 1e-6);
      EXPECT_EQ(f.size(), 32u * 40u);
      EXPECT_EQ(motion_kind_from_string(to_string(kind)), kind);
    }
  }
}

TEST(BlurSynth, PairsAreDeterministic) {
  CorpusConfig cfg;
  cfg.count = 2;
  cfg.size = 32;
  const auto a = make_pair(cfg, 1);
  const auto b = make_pair(cfg, 1);
  EXPECT_EQ(a.blurred.pixels, b.blurred.pixels);
  EXPECT_EQ(a.sharp.pixels, b.sharp.pixels);
  const auto c = make_pair(cfg, 0);
  EXPECT_NE(a.sharp.pixels, c.sharp.pixels);
}

TEST(BlurSynth, CorpusIsByteIdentical) {
  CorpusConfig cfg;
  cfg.count = 3;
  cfg.size = 32;
  cfg.seed = 11;
  const auto d1 = scratch("corpus_a");
  const auto d2 = scratch("corpus_b");
  make_corpus(cfg, d1);
  make_corpus(cfg, d2);
  for (const auto* name : {"manifest.txt", "blur_0000.png", "sharp_0000.png", "blur_0002.png", "sharp_0002.png"}) {
    ASSERT_TRUE(fs::exists(d1 / name)) << name;
    EXPECT_EQ(slurp(d1 / name), slurp(d2 / name)) << name;
  }
  const auto pairs = load_corpus(d1);
  ASSERT_EQ(pairs.size(), 3u);
  const auto direct = make_pair(cfg, 2);
  EXPECT_EQ(pairs[2].blurred.pixels, direct.blurred.pixels);
  EXPECT_EQ(pairs[2].sharp.pixels, direct.sharp.pixels);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(BlurSynth, EmptyCorpusIsFine) {
  CorpusConfig cfg;
  cfg.count = 0;
  const auto dir = scratch("corpus_empty");
  EXPECT_NO_THROW(make_corpus(cfg, dir));
  EXPECT_TRUE(fs::exists(dir / "manifest.txt"));
  EXPECT_TRUE(load_corpus(dir).empty());
  fs::remove_all(dir);
}

TEST(BlurSynth, ManifestRecordsGenerationParameters) {
  CorpusConfig cfg;
  cfg.count = 1;
  cfg.size = 32;
  cfg.seed = 5;
  cfg.crf_gamma = 2.2;
  cfg.noise_sigma = 0.01;
  const auto dir = scratch("corpus_manifest");
  make_corpus(cfg, dir);
  const std::string text = slurp(dir / "manifest.txt");
  for (const auto* key : {"seed", "gamma", "noise_sigma", "motion"}) EXPECT_NE(text.find(key), std::string::npos) << key;
  fs::remove_all(dir);
}

TEST(BlurSynth, DefaultCorpusBlurLevelIsPinned) {
  const CorpusConfig cfg;
  double total = 0.0;
  for (int i = 0; i < cfg.count; ++i) {
    const auto p = make_pair(cfg, i);
    total += psnr(p.blurred, p.sharp);
  }
  EXPECT_NEAR(total / cfg.count, kPinnedDefaultCorpusPsnr, 0.05);
}

}  // namespace
}  // namespace aspdc
