#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aspdc/image.hpp"

namespace aspdc {

// 10*log10(1/MSE) with peak 1.0; +infinity when the images are identical.
double psnr(const Image& a, const Image& b);

// Mean SSIM over valid 11x11 windows (Gaussian sigma 1.5, K1 0.01, K2 0.03,
// L 1) on Rec.601 luma.
double ssim(const Image& a, const Image& b);

// Rec.601 luma plane, row-major.
std::vector<double> luma(const Image& image);

// Statistics of |a - b| on the 0-255 scale, over every pixel and channel.
struct DiffStats {
  double mean = 0.0;
  double variance = 0.0;
};
DiffStats difference_stats(const Image& a, const Image& b);

struct MetricRow {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  double diff_mean = 0.0;
  double diff_variance = 0.0;
};

MetricRow evaluate_pair(const std::string& name, const Image& result, const Image& reference);

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(MetricRow row) { rows.push_back(std::move(row)); }
  // Column means over rows (PSNR is inf if any row is inf).
  MetricRow aggregate() const;
  // Header, one line per row, then a "mean" line. PSNR inf prints as "inf".
  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv() const;
};

std::string format_psnr(double db);

}  // namespace aspdc
