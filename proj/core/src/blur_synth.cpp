#include "aspdc/blur_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "aspdc/config.hpp"

namespace aspdc {

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::global_shake: return "global";
    case MotionKind::object: return "object";
    case MotionKind::mixture: return "mixture";
  }
  return "unknown";
}

MotionKind motion_kind_from_string(const std::string& name) {
  if (name == "global") return MotionKind::global_shake;
  if (name == "object") return MotionKind::object;
  if (name == "mixture") return MotionKind::mixture;
  throw ConfigError("unknown motion kind '" + name + "'");
}

MotionField MotionField::uniform(int height, int width, float vy, float vx) {
  MotionField f;
  f.height = height;
  f.width = width;
  f.vy.assign(static_cast<std::size_t>(height) * width, vy);
  f.vx.assign(static_cast<std::size_t>(height) * width, vx);
  std::ostringstream os;
  os << "uniform vy=" << vy << " vx=" << vx;
  f.description = os.str();
  return f;
}

double MotionField::max_magnitude() const {
  double m = 0.0;
  for (std::size_t i = 0; i < vy.size(); ++i) m = std::max(m, std::hypot(double(vy[i]), double(vx[i])));
  return m;
}

namespace {

struct Ellipse {
  double cy, cx, ry, rx, angle;
  double ty, tx;

  bool contains(double y, double x) const {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double dy = y - cy;
    const double dx = x - cx;
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

MotionField random_motion_field(int height, int width, MotionKind kind, double max_magnitude, Rng& rng) {
  MotionField f = MotionField::uniform(height, width, 0.0f, 0.0f);
  f.kind = kind;
  std::ostringstream desc;
  desc << to_string(kind);
  const double cy = (height - 1) / 2.0;
  const double cx = (width - 1) / 2.0;
  const double extent = std::max(1.0, std::max(cy, cx));

  // Global camera shake: translation plus a small linear (rotation/zoom) term.
  double ty = 0, tx = 0, a00 = 0, a01 = 0, a10 = 0, a11 = 0;
  if (kind != MotionKind::object) {
    const double mag = rng.uniform(0.3, 0.8) * max_magnitude;
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    ty = mag * std::sin(ang);
    tx = mag * std::cos(ang);
    const double lin = 0.25 * max_magnitude / extent;
    a00 = rng.uniform(-lin, lin);
    a01 = rng.uniform(-lin, lin);
    a10 = -a01 + rng.uniform(-lin, lin) * 0.2;
    a11 = rng.uniform(-lin, lin);
  } else {
    // Nearly static background.
    ty = rng.uniform(-1.0, 1.0);
    tx = rng.uniform(-1.0, 1.0);
  }
  desc << " t=(" << fmt(ty) << "," << fmt(tx) << ") A=(" << fmt(a00) << "," << fmt(a01) << "," << fmt(a10) << ","
       << fmt(a11) << ")";

  std::vector<Ellipse> objects;
  if (kind != MotionKind::global_shake) {
    const int count = rng.uniform_int(1, 3);
    for (int i = 0; i < count; ++i) {
      Ellipse e{};
      e.cy = rng.uniform(0.0, height - 1.0);
      e.cx = rng.uniform(0.0, width - 1.0);
      e.ry = rng.uniform(0.12, 0.35) * height;
      e.rx = rng.uniform(0.12, 0.35) * width;
      e.angle = rng.uniform(0.0, std::numbers::pi);
      const double mag = rng.uniform(0.4, 1.0) * max_magnitude;
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      e.ty = mag * std::sin(ang);
      e.tx = mag * std::cos(ang);
      objects.push_back(e);
      desc << " obj=(" << fmt(e.cy) << "," << fmt(e.cx) << "," << fmt(e.ry) << "," << fmt(e.rx) << "," << fmt(e.angle)
           << ";" << fmt(e.ty) << "," << fmt(e.tx) << ")";
    }
  }

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double vy = ty + a00 * (y - cy) + a01 * (x - cx);
      double vx = tx + a10 * (y - cy) + a11 * (x - cx);
      for (const auto& e : objects) {
        if (e.contains(y, x)) {
          vy = e.ty;
          vx = e.tx;
        }
      }
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      f.vy[i] = static_cast<float>(vy);
      f.vx[i] = static_cast<float>(vx);
    }
  }
  const double m = f.max_magnitude();
  if (m > max_magnitude && m > 0.0) {
    const double s = max_magnitude / m;
    for (std::size_t i = 0; i < f.size(); ++i) {
      f.vy[i] = static_cast<float>(f.vy[i] * s);
      f.vx[i] = static_cast<float>(f.vx[i] * s);
    }
    desc << " rescale=" << fmt(s);
  }
  f.description = desc.str();
  return f;
}

std::vector<double> exposure_times(int frames) {
  if (frames < 1) throw ContractError("exposure_times: need at least one frame");
  if (frames == 1) return {0.0};
  std::vector<double> t(frames);
  for (int k = 0; k < frames; ++k) t[k] = static_cast<double>(k) / (frames - 1) - 0.5;
  return t;
}

std::vector<Image> warp_frames(const Image& sharp, const MotionField& field, int frames) {
  if (field.height != sharp.height || field.width != sharp.width) {
    throw DimensionError("warp_frames: motion field does not match image size");
  }
  const auto times = exposure_times(frames);
  std::vector<Image> out;
  out.reserve(times.size());
  for (double t : times) {
    Image frame(sharp.height, sharp.width);
    for (int y = 0; y < sharp.height; ++y) {
      for (int x = 0; x < sharp.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * sharp.width + x;
        const float sy = static_cast<float>(y + t * field.vy[i]);
        const float sx = static_cast<float>(x + t * field.vx[i]);
        for (int c = 0; c < 3; ++c) frame.at(y, x, c) = bilinear(sharp.channel(c), sy, sx);
      }
    }
    out.push_back(std::move(frame));
  }
  return out;
}

Image blur_temporal(std::span<const Image> frames, double crf_gamma) {
  if (frames.empty()) throw ContractError("blur_temporal: empty frame list");
  if (crf_gamma <= 0.0) throw ContractError("blur_temporal: gamma must be positive");
  const Image& f0 = frames[0];
  std::vector<double> acc(f0.pixels.size(), 0.0);
  for (const auto& f : frames) {
    if (!f.same_size(f0)) throw DimensionError("blur_temporal: frames differ in size");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.pixels[i];
  }
  Image out(f0.height, f0.width);
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double mean = acc[i] * inv;
    out.pixels[i] = static_cast<float>(crf_gamma == 1.0 ? mean : std::pow(std::max(mean, 0.0), 1.0 / crf_gamma));
  }
  return out;
}

Image blur_temporal(const Image& sharp, const MotionField& field, int frames, double crf_gamma) {
  const auto warped = warp_frames(sharp, field, frames);
  return blur_temporal(std::span<const Image>(warped), crf_gamma);
}

SparseKernelMatrix::SparseKernelMatrix(int height, int width, std::vector<std::vector<Entry>> footprints)
    : height_(height), width_(width) {
  if (footprints.size() != static_cast<std::size_t>(height) * width) {
    throw ContractError("SparseKernelMatrix: need one footprint per pixel");
  }
  starts_.reserve(footprints.size() + 1);
  starts_.push_back(0);
  for (std::size_t i = 0; i < footprints.size(); ++i) {
    double total = 0.0;
    for (const auto& e : footprints[i]) {
      if (!(e.weight >= 0.0f)) {
        throw ContractError("SparseKernelMatrix: negative weight at pixel " + std::to_string(i));
      }
      total += e.weight;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("SparseKernelMatrix: footprint of pixel " + std::to_string(i) + " sums to " +
                          std::to_string(total));
    }
    entries_.insert(entries_.end(), footprints[i].begin(), footprints[i].end());
    starts_.push_back(entries_.size());
  }
}

std::span<const SparseKernelMatrix::Entry> SparseKernelMatrix::footprint(int y, int x) const {
  const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
  return {entries_.data() + starts_[i], starts_[i + 1] - starts_[i]};
}

SparseKernelMatrix SparseKernelMatrix::identity(int height, int width) {
  std::vector<std::vector<Entry>> fp(static_cast<std::size_t>(height) * width, std::vector<Entry>{{0, 0, 1.0f}});
  return SparseKernelMatrix(height, width, std::move(fp));
}

SparseKernelMatrix SparseKernelMatrix::box3x3(int height, int width) {
  std::vector<Entry> box;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) box.push_back({dy, dx, 1.0f / 9.0f});
  }
  std::vector<std::vector<Entry>> fp(static_cast<std::size_t>(height) * width, box);
  return SparseKernelMatrix(height, width, std::move(fp));
}

SparseKernelMatrix SparseKernelMatrix::from_motion(const MotionField& field, int samples) {
  std::vector<std::vector<Entry>> fp(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double vy = field.vy[i];
    const double vx = field.vx[i];
    int n = samples;
    if (n <= 0) n = std::max(15, 4 * static_cast<int>(std::ceil(std::hypot(vy, vx))) + 1);
    const auto times = exposure_times(n);
    std::map<std::pair<int, int>, double> acc;
    const double w = 1.0 / n;
    for (double t : times) {
      const double py = t * vy;
      const double px = t * vx;
      const double fy = std::floor(py);
      const double fx = std::floor(px);
      const double ly = py - fy;
      const double lx = px - fx;
      const int y0 = static_cast<int>(fy);
      const int x0 = static_cast<int>(fx);
      acc[{y0, x0}] += w * (1 - ly) * (1 - lx);
      acc[{y0, x0 + 1}] += w * (1 - ly) * lx;
      acc[{y0 + 1, x0}] += w * ly * (1 - lx);
      acc[{y0 + 1, x0 + 1}] += w * ly * lx;
    }
    double total = 0.0;
    for (const auto& [k, v] : acc) total += v;
    for (const auto& [k, v] : acc) {
      if (v > 0.0) fp[i].push_back({k.first, k.second, static_cast<float>(v / total)});
    }
    // Fold float rounding into the largest tap so the sum stays within tolerance.
    double fsum = 0.0;
    for (const auto& e : fp[i]) fsum += e.weight;
    auto it = std::max_element(fp[i].begin(), fp[i].end(),
                               [](const Entry& a, const Entry& b) { return a.weight < b.weight; });
    it->weight = static_cast<float>(it->weight + (1.0 - fsum));
  }
  return SparseKernelMatrix(field.height, field.width, std::move(fp));
}

Image blur_kernel_matrix(const Image& sharp, const SparseKernelMatrix& kernels, double noise_sigma, Rng* rng) {
  if (kernels.height() != sharp.height || kernels.width() != sharp.width) {
    throw DimensionError("blur_kernel_matrix: kernel matrix does not cover the image");
  }
  if (noise_sigma > 0.0 && rng == nullptr) throw ContractError("blur_kernel_matrix: noise requires an rng");
  Image out(sharp.height, sharp.width);
  for (int y = 0; y < sharp.height; ++y) {
    for (int x = 0; x < sharp.width; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (const auto& e : kernels.footprint(y, x)) {
        const int sy = std::clamp(y + e.dy, 0, sharp.height - 1);
        const int sx = std::clamp(x + e.dx, 0, sharp.width - 1);
        for (int c = 0; c < 3; ++c) acc[c] += e.weight * sharp.at(sy, sx, c);
      }
      for (int c = 0; c < 3; ++c) {
        double v = acc[c];
        if (noise_sigma > 0.0) v += rng->normal(0.0, noise_sigma);
        out.at(y, x, c) = static_cast<float>(v);
      }
    }
  }
  return out;
}

namespace {

struct Color {
  double r, g, b;
};

Color random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

void blend(Image& im, int y, int x, const Color& c, double alpha) {
  im.at(y, x, 0) = static_cast<float>((1 - alpha) * im.at(y, x, 0) + alpha * c.r);
  im.at(y, x, 1) = static_cast<float>((1 - alpha) * im.at(y, x, 1) + alpha * c.g);
  im.at(y, x, 2) = static_cast<float>((1 - alpha) * im.at(y, x, 2) + alpha * c.b);
}

bool inside_polygon(const std::vector<std::pair<double, double>>& pts, double y, double x) {
  bool in = false;
  for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
    const auto [yi, xi] = pts[i];
    const auto [yj, xj] = pts[j];
    if (((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi)) in = !in;
  }
  return in;
}

}  // namespace

Image procedural_image(int height, int width, Rng& rng) {
  Image im(height, width);
  // Background gradient.
  const Color c0 = random_color(rng);
  const Color c1 = random_color(rng);
  const double ga = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gy = std::sin(ga);
  const double gx = std::cos(ga);
  const double span = std::abs(gy) * height + std::abs(gx) * width + 1e-9;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double t = (gy * y + gx * x) / span;
      t = t - std::floor(t);
      im.at(y, x, 0) = static_cast<float>(c0.r + (c1.r - c0.r) * t);
      im.at(y, x, 1) = static_cast<float>(c0.g + (c1.g - c0.g) * t);
      im.at(y, x, 2) = static_cast<float>(c0.b + (c1.b - c0.b) * t);
    }
  }

  // Textured star-shaped polygons.
  const int polys = rng.uniform_int(6, 12);
  for (int p = 0; p < polys; ++p) {
    const double cy = rng.uniform(0.0, height);
    const double cx = rng.uniform(0.0, width);
    const double radius = rng.uniform(0.08, 0.3) * std::min(height, width);
    const int verts = rng.uniform_int(3, 8);
    std::vector<double> angles(verts);
    for (auto& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    std::vector<std::pair<double, double>> pts;
    for (double a : angles) {
      const double r = radius * rng.uniform(0.5, 1.0);
      pts.emplace_back(cy + r * std::sin(a), cx + r * std::cos(a));
    }
    const Color col = random_color(rng);
    const double freq = rng.uniform(0.2, 1.2);
    const double ta = rng.uniform(0.0, std::numbers::pi);
    const double amp = rng.uniform(0.0, 0.25);
    const int y0 = std::max(0, static_cast<int>(cy - radius) - 1);
    const int y1 = std::min(height - 1, static_cast<int>(cy + radius) + 1);
    const int x0 = std::max(0, static_cast<int>(cx - radius) - 1);
    const int x1 = std::min(width - 1, static_cast<int>(cx + radius) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!inside_polygon(pts, y + 0.5, x + 0.5)) continue;
        const double tex = amp * std::sin(freq * (std::cos(ta) * x + std::sin(ta) * y));
        const Color c{std::clamp(col.r + tex, 0.0, 1.0), std::clamp(col.g + tex, 0.0, 1.0),
                      std::clamp(col.b + tex, 0.0, 1.0)};
        blend(im, y, x, c, 1.0);
      }
    }
  }

  // Glyph-like strokes: short horizontal/vertical bars grouped into "letters".
  const int glyphs = rng.uniform_int(3, 7);
  for (int g = 0; g < glyphs; ++g) {
    const Color col = rng.uniform() < 0.5 ? Color{0.05, 0.05, 0.05} : Color{0.95, 0.95, 0.95};
    const int size = rng.uniform_int(5, std::max(6, std::min(height, width) / 6));
    const int oy = rng.uniform_int(0, std::max(0, height - size - 1));
    const int ox = rng.uniform_int(0, std::max(0, width - size - 1));
    const int thick = std::max(1, size / 5);
    const int strokes = rng.uniform_int(2, 4);
    for (int s = 0; s < strokes; ++s) {
      const bool horizontal = rng.uniform() < 0.5;
      const int pos = rng.uniform_int(0, size - thick);
      for (int a = 0; a < size; ++a) {
        for (int b = 0; b < thick; ++b) {
          const int y = oy + (horizontal ? pos + b : a);
          const int x = ox + (horizontal ? a : pos + b);
          if (y >= 0 && y < height && x >= 0 && x < width) blend(im, y, x, col, 1.0);
        }
      }
    }
  }
  for (auto& v : im.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return im;
}

CorpusPair make_pair(const CorpusConfig& config, int index, std::string* motion_description) {
  Rng rng(Rng::derive(config.seed, static_cast<std::uint64_t>(index)));
  const int margin = static_cast<int>(std::ceil(config.max_motion / 2.0)) + 2;
  const int full = config.size + 2 * margin;
  const Image sharp_full = procedural_image(full, full, rng);
  const auto kind = static_cast<MotionKind>(rng.uniform_int(0, 2));
  const auto field = random_motion_field(full, full, kind, config.max_motion, rng);
  Image blurred_full = blur_temporal(sharp_full, field, config.frames, config.crf_gamma);
  if (config.noise_sigma > 0.0) {
    for (auto& v : blurred_full.pixels) v = static_cast<float>(v + rng.normal(0.0, config.noise_sigma));
  }
  // Snap to the 8-bit grid so in-memory pairs equal what the PNG files hold.
  for (auto& v : blurred_full.pixels) v = quantize(v) / 255.0f;
  Image sharp_q = sharp_full;
  for (auto& v : sharp_q.pixels) v = quantize(v) / 255.0f;
  if (motion_description != nullptr) *motion_description = field.description;
  std::ostringstream name;
  name << std::setw(4) << std::setfill('0') << index;
  return {name.str(), crop(blurred_full, margin, margin, config.size, config.size),
          crop(sharp_q, margin, margin, config.size, config.size)};
}

void make_corpus(const CorpusConfig& config, const std::filesystem::path& dir) {
  if (config.count < 0 || config.size < 1 || config.frames < 1) throw ConfigError("invalid corpus configuration");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());

  std::vector<std::string> descriptions(config.count);
  auto work = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const auto pair = make_pair(config, i, &descriptions[i]);
      write_png(dir / ("blur_" + pair.name + ".png"), pair.blurred);
      write_png(dir / ("sharp_" + pair.name + ".png"), pair.sharp);
    }
  };
  const int workers = std::clamp(static_cast<int>(std::thread::hardware_concurrency()), 1, 8);
  std::vector<std::future<void>> jobs;
  const int chunk = (config.count + workers - 1) / std::max(workers, 1);
  for (int b = 0; b < config.count; b += chunk) jobs.push_back(std::async(std::launch::async, work, b, std::min(config.count, b + chunk)));
  for (auto& j : jobs) j.get();

  std::ofstream m(dir / "manifest.txt");
  if (!m) throw IoError("cannot write manifest in " + dir.string());
  m << "# synthetic blurred/sharp corpus\n";
  m << "seed = " << config.seed << "\n";
  m << "count = " << config.count << "\n";
  m << "size = " << config.size << "\n";
  m << "frames = " << config.frames << "\n";
  m << "gamma = " << fmt(config.crf_gamma) << "\n";
  m << "noise_sigma = " << fmt(config.noise_sigma) << "\n";
  m << "max_motion = " << fmt(config.max_motion) << "\n";
  for (int i = 0; i < config.count; ++i) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << i;
    m << "\n[pair " << name.str() << "]\n";
    m << "blur = blur_" << name.str() << ".png\n";
    m << "sharp = sharp_" << name.str() << ".png\n";
    m << "motion = " << descriptions[i] << "\n";
  }
  if (!m) throw IoError("failed writing manifest in " + dir.string());
}

std::vector<CorpusPair> load_corpus(const std::filesystem::path& dir) {
  const auto doc = KeyValueDocument::read(dir / "manifest.txt");
  std::vector<CorpusPair> pairs;
  std::map<std::string, std::pair<std::string, std::string>> files;
  std::vector<std::string> order;
  for (const auto& e : doc.entries()) {
    if (e.section.rfind("pair ", 0) != 0) continue;
    const std::string name = e.section.substr(5);
    if (!files.count(name)) order.push_back(name);
    if (e.key == "blur") files[name].first = e.value;
    if (e.key == "sharp") files[name].second = e.value;
  }
  for (const auto& name : order) {
    const auto& [blur, sharp] = files[name];
    if (blur.empty() || sharp.empty()) throw IoError("manifest entry '" + name + "' lacks blur/sharp files");
    pairs.push_back({name, read_png(dir / blur), read_png(dir / sharp)});
  }
  return pairs;
}

}  // namespace aspdc
