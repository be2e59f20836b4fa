#include "aspdc/metrics.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace aspdc {

namespace {

void require_same(const char* op, const Image& a, const Image& b) {
  if (!a.same_size(b)) {
    throw DimensionError(std::string(op) + ": image sizes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                         ")");
  }
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Separable valid-mode Gaussian filter: (h - 10) x (w - 10) result.
std::vector<double> gaussian_valid(const std::vector<double>& src, int h, int w) {
  static const auto g = gaussian_taps();
  const int oh = h - kWindow + 1;
  const int ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same("psnr", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    acc += d * d;
  }
  if (acc == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = acc / static_cast<double>(a.pixels.size());
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<double> luma(const Image& image) {
  std::vector<double> y(static_cast<std::size_t>(image.height) * image.width);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.299 * image.pixels[3 * i] + 0.587 * image.pixels[3 * i + 1] + 0.114 * image.pixels[3 * i + 2];
  }
  return y;
}

double ssim(const Image& a, const Image& b) {
  require_same("ssim", a, b);
  if (a.height < kWindow || a.width < kWindow) {
    throw DimensionError("ssim: images must be at least 11x11, got " + std::to_string(a.height) + "x" +
                         std::to_string(a.width));
  }
  const int h = a.height;
  const int w = a.width;
  const auto la = luma(a);
  const auto lb = luma(b);
  std::vector<double> aa(la.size()), bb(la.size()), ab(la.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    aa[i] = la[i] * la[i];
    bb[i] = lb[i] * lb[i];
    ab[i] = la[i] * lb[i];
  }
  const auto mu_a = gaussian_valid(la, h, w);
  const auto mu_b = gaussian_valid(lb, h, w);
  const auto e_aa = gaussian_valid(aa, h, w);
  const auto e_bb = gaussian_valid(bb, h, w);
  const auto e_ab = gaussian_valid(ab, h, w);
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

DiffStats difference_stats(const Image& a, const Image& b) {
  require_same("difference_stats", a, b);
  const double n = static_cast<double>(a.pixels.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = std::abs(static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i])) * 255.0;
    sum += d;
    sum_sq += d * d;
  }
  DiffStats s;
  s.mean = sum / n;
  s.variance = std::max(0.0, sum_sq / n - s.mean * s.mean);
  return s;
}

MetricRow evaluate_pair(const std::string& name, const Image& result, const Image& reference) {
  MetricRow row;
  row.name = name;
  row.psnr = psnr(result, reference);
  row.ssim = ssim(result, reference);
  const auto d = difference_stats(result, reference);
  row.diff_mean = d.mean;
  row.diff_variance = d.variance;
  return row;
}

MetricRow MetricReport::aggregate() const {
  MetricRow m;
  m.name = "mean";
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.psnr += r.psnr;
    m.ssim += r.ssim;
    m.diff_mean += r.diff_mean;
    m.diff_variance += r.diff_variance;
  }
  const double n = static_cast<double>(rows.size());
  m.psnr /= n;
  m.ssim /= n;
  m.diff_mean /= n;
  m.diff_variance /= n;
  return m;
}

std::string format_psnr(double db) {
  if (std::isinf(db)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << db;
  return os.str();
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "image,psnr,ssim,diff_mean,diff_variance\n";
  auto line = [&os](const MetricRow& r) {
    os << r.name << ',' << format_psnr(r.psnr) << ',' << std::setprecision(10) << r.ssim << ',' << r.diff_mean << ','
       << r.diff_variance << '\n';
  };
  for (const auto& r : rows) line(r);
  line(aggregate());
  return os.str();
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_csv();
}

}  // namespace aspdc
