#include "aspdc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "aspdc/aspdc.hpp"
#include "aspdc/deblur_net.hpp"
#include "aspdc/deform.hpp"
#include "aspdc/ops.hpp"
#include "aspdc/reblur_net.hpp"

namespace aspdc {

namespace {

using T64 = Tensor64;

// Gradients smaller than this are treated as zero when forming relative errors.
constexpr double kGradFloor = 1e-5;

double weighted_sum(const T64& out, const T64& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) acc += out.data()[i] * r.data()[i];
  return acc;
}

T64 random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T64 t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t.set_requires_grad();
}

// Offsets whose fractional part stays in [0.15, 0.85], away from the
// bilinear cell boundaries where the derivative jumps.
T64 random_offsets(Shape s, Rng& rng, double span = 2.0) {
  T64 t(s);
  for (auto& v : t.data()) {
    const int whole = rng.uniform_int(-static_cast<int>(span), static_cast<int>(span));
    v = whole + rng.uniform(0.15, 0.85);
  }
  return t.set_requires_grad();
}

// Replace the zero-initialised generator with small random weights and
// offset biases near half a pixel, so sampling points sit inside cells.
void jitter_generator(DeformBranchParams<double>& b, Rng& rng) {
  for (auto& v : b.generator.weight.data()) v = rng.normal(0.0, 0.01);
  auto bias = b.generator.bias.data();
  const int offset_channels = b.zero_offset ? 0 : 18;
  for (int i = 0; i < static_cast<int>(bias.size()); ++i) {
    bias[i] = i < offset_channels ? rng.uniform(0.35, 0.65) : rng.normal(0.0, 0.5);
  }
}

void randomize_if_zero(const ParamList<double>& params, Rng& rng) {
  for (const auto& p : params) {
    T64 t = p.tensor;
    const bool zero = std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
    if (zero && p.name.find(".gen.") == std::string::npos) {
      for (auto& v : t.data()) v = rng.normal(0.0, 0.1);
    }
  }
}

void jitter_stack(AspdcStack<double>& stack, Rng& rng) {
  for (auto& m : stack.modules) {
    for (auto& b : m.branches) jitter_generator(b, rng);
  }
}

std::vector<T64> tensors_of(const ParamList<double>& params) {
  std::vector<T64> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

struct Check {
  std::string name;
  std::function<double(Rng&, const GradcheckOptions&)> run;
};

std::vector<Check> build_suite() {
  std::vector<Check> s;
  auto add_check = [&s](std::string name, std::function<double(Rng&, const GradcheckOptions&)> fn) {
    s.push_back({std::move(name), std::move(fn)});
  };

  // Convolutions.
  for (int stride : {1, 2}) {
    add_check("conv2d stride " + std::to_string(stride), [stride](Rng& rng, const GradcheckOptions& o) {
      auto x = random_tensor({2, 3, 7, 6}, rng);
      auto w = random_tensor({4, 3, 3, 3}, rng);
      auto b = random_tensor({1, 4, 1, 1}, rng);
      return gradient_error([&] { return conv2d(x, w, b, stride, 1, 1); }, {x, w, b}, rng, o);
    });
  }
  add_check("conv2d dilation 2", [](Rng& rng, const GradcheckOptions& o) {
    auto x = random_tensor({1, 2, 8, 8}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({1, 3, 1, 1}, rng);
    return gradient_error([&] { return conv2d(x, w, b, 1, 2, 2); }, {x, w, b}, rng, o);
  });
  add_check("conv2d 1x1", [](Rng& rng, const GradcheckOptions& o) {
    auto x = random_tensor({2, 4, 5, 5}, rng);
    auto w = random_tensor({2, 4, 1, 1}, rng);
    auto b = random_tensor({1, 2, 1, 1}, rng);
    return gradient_error([&] { return conv2d(x, w, b, 1, 0, 1); }, {x, w, b}, rng, o);
  });
  add_check("deconv2d", [](Rng& rng, const GradcheckOptions& o) {
    auto x = random_tensor({2, 3, 4, 5}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({1, 2, 1, 1}, rng);
    return gradient_error([&] { return deconv2d(x, w, b, 2, 1); }, {x, w, b}, rng, o);
  });

  // Elementwise and structural ops.
  add_check("relu", [](Rng& rng, const GradcheckOptions& o) {
    T64 x({2, 3, 4, 4});
    for (auto& v : x.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
    x.set_requires_grad();
    return gradient_error([&] { return relu(x); }, {x}, rng, o);
  });
  add_check("sigmoid", [](Rng& rng, const GradcheckOptions& o) {
    auto x = random_tensor({2, 3, 4, 4}, rng, -3.0, 3.0);
    return gradient_error([&] { return sigmoid(x); }, {x}, rng, o);
  });
  add_check("add/sub/mul", [](Rng& rng, const GradcheckOptions& o) {
    auto a = random_tensor({2, 3, 4, 4}, rng);
    auto b = random_tensor({2, 3, 4, 4}, rng);
    auto c = random_tensor({2, 3, 4, 4}, rng);
    return gradient_error([&] { return mul(sub(add(a, b), c), a); }, {a, b, c}, rng, o);
  });
  add_check("scale and channel broadcast", [](Rng& rng, const GradcheckOptions& o) {
    auto a = random_tensor({2, 1, 4, 5}, rng);
    auto f = random_tensor({2, 3, 4, 5}, rng);
    return gradient_error([&] { return scale(mul_channel_broadcast(a, f), -1.7); }, {a, f}, rng, o);
  });
  add_check("concat/slice/split", [](Rng& rng, const GradcheckOptions& o) {
    auto a = random_tensor({2, 2, 3, 3}, rng);
    auto b = random_tensor({2, 3, 3, 3}, rng);
    return gradient_error(
        [&] {
          auto cat = concat_channels<double>({a, b, a});
          const int sizes[] = {3, 4};
          auto parts = split_channels(cat, std::span<const int>(sizes));
          return mul(slice_channels(parts[1], 1, 3), parts[0]);
        },
        {a, b}, rng, o);
  });
  add_check("softmax_channels", [](Rng& rng, const GradcheckOptions& o) {
    auto x = random_tensor({2, 4, 3, 5}, rng, -2.0, 2.0);
    return gradient_error([&] { return softmax_channels(x); }, {x}, rng, o);
  });
  add_check("mse and sum", [](Rng& rng, const GradcheckOptions& o) {
    auto a = random_tensor({2, 3, 4, 4}, rng);
    auto b = random_tensor({2, 3, 4, 4}, rng);
    return gradient_error([&] { return add(mse(a, b), scale(sum(a), 0.01)); }, {a, b}, rng, o);
  });

  // Bilinear sampling: values are linear in the plane, and the position
  // derivatives are checked directly against central differences.
  add_check("bilinear_sample", [](Rng& rng, const GradcheckOptions& o) {
    T64 plane = random_tensor({1, 1, 5, 6}, rng);
    const auto view = plane_of(plane, 0, 0);
    double worst = 0.0;
    double scale_ref = 1e-12;
    std::vector<std::pair<double, double>> errs;
    for (int i = 0; i < 40; ++i) {
      const double y = rng.uniform_int(-1, 5) + rng.uniform(0.15, 0.85);
      const double x = rng.uniform_int(-1, 6) + rng.uniform(0.15, 0.85);
      const auto s = bilinear_with_grad(view, y, x);
      const double ny = (bilinear(view, y + o.step, x) - bilinear(view, y - o.step, x)) / (2 * o.step);
      const double nx = (bilinear(view, y, x + o.step) - bilinear(view, y, x - o.step)) / (2 * o.step);
      worst = std::max({worst, std::abs(s.d_dy - ny), std::abs(s.d_dx - nx)});
      scale_ref = std::max({scale_ref, std::abs(ny), std::abs(nx)});
      if (std::abs(bilinear_sample(plane, y, x, 0, 0) - s.value) > 0) return 1.0;
      // d value / d plane entry via perturbing the four neighbours.
      for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
          const int py = static_cast<int>(std::floor(y)) + dy;
          const int px = static_cast<int>(std::floor(x)) + dx;
          if (py < 0 || py >= 5 || px < 0 || px >= 6) continue;
          const double wy = dy ? y - std::floor(y) : 1 - (y - std::floor(y));
          const double wx = dx ? x - std::floor(x) : 1 - (x - std::floor(x));
          double& cell = plane.at(0, 0, py, px);
          const double keep = cell;
          cell = keep + o.step;
          const double up = bilinear(view, y, x);
          cell = keep - o.step;
          const double down = bilinear(view, y, x);
          cell = keep;
          errs.emplace_back(wy * wx, (up - down) / (2 * o.step));
        }
      }
    }
    for (const auto& [a, n] : errs) worst = std::max(worst, std::abs(a - n));
    return worst / scale_ref;
  });

  // Deformable convolution.
  for (int d : {1, 2, 4}) {
    add_check("deform_conv2d dilation " + std::to_string(d), [d](Rng& rng, const GradcheckOptions& o) {
      auto x = random_tensor({1, 2, 7, 6}, rng);
      auto w = random_tensor({3, 2, 3, 3}, rng);
      auto b = random_tensor({1, 3, 1, 1}, rng);
      auto off = random_offsets({1, 18, 7, 6}, rng);
      auto m = random_tensor({1, 9, 7, 6}, rng, 0.0, 1.0);
      return gradient_error([&] { return deform_conv2d(x, w, off, m, d, false, b); }, {x, w, b, off, m}, rng, o);
    });
  }
  add_check("deform_conv2d offsets only", [](Rng& rng, const GradcheckOptions& o) {
    auto x = random_tensor({2, 3, 6, 6}, rng);
    auto w = random_tensor({2, 3, 3, 3}, rng);
    auto off = random_offsets({2, 18, 6, 6}, rng, 4.0);
    auto m = random_tensor({2, 9, 6, 6}, rng, 0.0, 1.0);
    GradcheckOptions dense = o;
    dense.max_elements = 96;
    return gradient_error([&] { return deform_conv2d(x, w, off, m, 1, false); }, {off}, rng, dense);
  });
  add_check("deform_conv2d modulation only", [](Rng& rng, const GradcheckOptions& o) {
    auto x = random_tensor({2, 3, 6, 6}, rng);
    auto w = random_tensor({2, 3, 3, 3}, rng);
    auto off = random_offsets({2, 18, 6, 6}, rng);
    auto m = random_tensor({2, 9, 6, 6}, rng, 0.0, 1.0);
    GradcheckOptions dense = o;
    dense.max_elements = 96;
    return gradient_error([&] { return deform_conv2d(x, w, off, m, 2, false); }, {m}, rng, dense);
  });
  add_check("deform_conv2d zero-offset mode", [](Rng& rng, const GradcheckOptions& o) {
    auto x = random_tensor({1, 2, 6, 7}, rng);
    auto w = random_tensor({2, 2, 3, 3}, rng);
    auto b = random_tensor({1, 2, 1, 1}, rng);
    auto m = random_tensor({1, 9, 6, 7}, rng, 0.0, 1.0);
    return gradient_error([&] { return deform_conv2d(x, w, T64(), m, 1, true, b); }, {x, w, b, m}, rng, o);
  });
  add_check("deform branch (generator + deform conv)", [](Rng& rng, const GradcheckOptions& o) {
    auto branch = DeformBranchParams<double>::create(3, 2, false, rng);
    jitter_generator(branch, rng);
    auto x = random_tensor({1, 3, 6, 6}, rng);
    return gradient_error(
        [&] {
          const auto om = gen_offsets_modulation(x, branch);
          return deform_conv2d(x, branch.weight, om.offsets, om.modulation, 2, false, branch.bias);
        },
                          {x, branch.weight, branch.bias, branch.generator.weight, branch.generator.bias}, rng, o);
  });

  // Dynamic filtering.
  add_check("apply_dynamic_filter features", [](Rng& rng, const GradcheckOptions& o) {
    auto f = random_tensor({1, 2, 5, 5}, rng);
    auto k = random_tensor({1, 9, 5, 5}, rng);
    return gradient_error([&] { return apply_dynamic_filter(f, k); }, {f}, rng, o);
  });
  add_check("apply_dynamic_filter filters", [](Rng& rng, const GradcheckOptions& o) {
    auto f = random_tensor({2, 3, 4, 6}, rng);
    auto k = random_tensor({2, 9, 4, 6}, rng);
    return gradient_error([&] { return apply_dynamic_filter(f, k); }, {k}, rng, o);
  });

  // Attention fusion and modules.
  add_check("afim", [](Rng& rng, const GradcheckOptions& o) {
    Afim<double> a(3, 4, rng);
    std::vector<T64> branches;
    for (int i = 0; i < 4; ++i) branches.push_back(random_tensor({1, 3, 4, 4}, rng));
    std::vector<T64> wrt = branches;
    for (auto t : {a.fuse.weight, a.fuse.bias, a.logits.weight, a.logits.bias}) wrt.push_back(t);
    return gradient_error([&] { return afim(a, std::span<const T64>(branches)); }, wrt, rng, o);
  });
  add_check("aspdc module", [](Rng& rng, const GradcheckOptions& o) {
    AspdcModule<double> m(3, AspdcConfig{}, rng);
    for (auto& b : m.branches) jitter_generator(b, rng);
    ParamList<double> p;
    m.collect(p, "m");
    auto x = random_tensor({1, 3, 6, 6}, rng);
    auto wrt = tensors_of(p);
    wrt.push_back(x);
    return gradient_error([&] { return m.forward(x).features; }, wrt, rng, o);
  });
  add_check("aspdc module without afim", [](Rng& rng, const GradcheckOptions& o) {
    AspdcConfig cfg;
    cfg.afim_enabled = false;
    AspdcModule<double> m(2, cfg, rng);
    for (auto& b : m.branches) jitter_generator(b, rng);
    ParamList<double> p;
    m.collect(p, "m");
    auto x = random_tensor({1, 2, 5, 6}, rng);
    auto wrt = tensors_of(p);
    wrt.push_back(x);
    return gradient_error([&] { return m.forward(x).features; }, wrt, rng, o);
  });
  add_check("aspdc stack", [](Rng& rng, const GradcheckOptions& o) {
    AspdcStack<double> st(2, 2, AspdcConfig{}, rng);
    jitter_stack(st, rng);
    ParamList<double> p;
    st.collect(p, "s");
    auto x = random_tensor({1, 2, 5, 5}, rng);
    auto wrt = tensors_of(p);
    wrt.push_back(x);
    return gradient_error([&] { return st.forward(x).features; }, wrt, rng, o);
  });
  add_check("resblock", [](Rng& rng, const GradcheckOptions& o) {
    ResBlock<double> r(3, rng);
    auto x = random_tensor({2, 3, 5, 5}, rng);
    return gradient_error([&] { return r(x); },
                          {x, r.first.weight, r.first.bias, r.second.weight, r.second.bias}, rng, o);
  });

  // Micro networks.
  add_check("deblur micro-network", [](Rng& rng, const GradcheckOptions& o) {
    DeblurNetConfig cfg;
    cfg.base_width = 1;
    cfg.n_modules = 2;
    DeblurNet<double> net(cfg, rng.next_u64());
    jitter_stack(net.stack, rng);
    randomize_if_zero(net.parameters(), rng);
    auto x = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    auto wrt = tensors_of(net.parameters());
    wrt.push_back(x);
    return gradient_error([&] { return net.forward(x).image; }, wrt, rng, o);
  });
  add_check("reblur micro-network", [](Rng& rng, const GradcheckOptions& o) {
    ReblurNetConfig cfg;
    cfg.base_width = 2;
    cfg.levels = 2;
    ReblurNet<double> net(cfg, rng.next_u64());
    randomize_if_zero(net.parameters(), rng);
    auto s = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    auto b = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    auto wrt = tensors_of(net.parameters());
    wrt.push_back(s);
    wrt.push_back(b);
    return gradient_error([&] { return net.forward(s, b); }, wrt, rng, o);
  });
  add_check("deblur-reblur consistency chain", [](Rng& rng, const GradcheckOptions& o) {
    DeblurNetConfig dcfg;
    dcfg.base_width = 1;
    dcfg.n_modules = 1;
    DeblurNet<double> deblur(dcfg, rng.next_u64());
    jitter_stack(deblur.stack, rng);
    randomize_if_zero(deblur.parameters(), rng);
    ReblurNetConfig rcfg;
    rcfg.base_width = 2;
    rcfg.levels = 2;
    ReblurNet<double> reblur(rcfg, rng.next_u64());
    randomize_if_zero(reblur.parameters(), rng);
    for (const auto& p : reblur.parameters()) T64(p.tensor).set_requires_grad(false);
    auto b = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    b.set_requires_grad(false);
    auto sharp = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    sharp.set_requires_grad(false);
    auto wrt = tensors_of(deblur.parameters());
    return gradient_error(
        [&] {
          auto d = deblur.forward(b).image;
          return add(mse(d, sharp), scale(mse(reblur.forward(d, b), b), 0.1));
        },
        wrt, rng, o);
  });
  return s;
}

}  // namespace

double gradient_error(const std::function<T64()>& fn, const std::vector<T64>& wrt, Rng& rng,
                      const GradcheckOptions& options) {
  auto& tape = GradTape<double>::current();
  tape.clear();
  for (auto t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  T64 out = fn();
  T64 r(out.shape());
  for (auto& v : r.data()) v = rng.normal();
  backward(sum(mul(out, r)));

  double worst = 0.0;
  for (auto t : wrt) {
    const std::size_t n = t.numel();
    std::vector<std::size_t> idx;
    if (static_cast<int>(n) <= options.max_elements) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (int i = 0; i < options.max_elements; ++i) idx.push_back(static_cast<std::size_t>(rng.next_u64() % n));
    }
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(n, 0.0);
    double max_diff = 0.0;
    double max_num = kGradFloor;
    NoGradGuard<double> guard;
    const double base = weighted_sum(fn(), r);
    for (std::size_t i : idx) {
      double& v = t.data()[i];
      const double keep = v;
      double numeric = 0.0;
      double forward = 0.0;
      double backward = 0.0;
      bool smooth = false;
      double h = options.step;
      for (int attempt = 0; attempt < 4 && !smooth; ++attempt, h *= 0.1) {
        v = keep + h;
        const double up = weighted_sum(fn(), r);
        v = keep - h;
        const double down = weighted_sum(fn(), r);
        v = keep;
        numeric = (up - down) / (2 * h);
        forward = (up - base) / h;
        backward = (base - down) / h;
        // One-sided slopes that disagree mean the stencil straddles a ReLU or
        // bilinear-cell kink; shrink the step until it no longer does.
        smooth = std::abs(forward - backward) <= 0.1 * options.tolerance * std::max(std::abs(numeric), kGradFloor);
      }
      // Still straddling at the finest step: the point sits on the kink, where
      // backward() must return one of the one-sided derivatives.
      if (!smooth) {
        numeric = std::abs(forward - analytic[i]) < std::abs(backward - analytic[i]) ? forward : backward;
      }
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      max_num = std::max(max_num, std::abs(numeric));
    }
    worst = std::max(worst, max_diff / max_num);
  }
  tape.clear();
  return worst;
}

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options,
                                                 const std::function<void(const GradcheckResult&)>& progress) {
  std::vector<GradcheckResult> results;
  const auto suite = build_suite();
  for (std::size_t c = 0; c < suite.size(); ++c) {
    GradcheckResult res;
    res.name = suite[c].name;
    for (int s = 0; s < options.seeds; ++s) {
      Rng rng(Rng::derive(options.base_seed, c * 1000 + static_cast<std::uint64_t>(s)));
      res.max_error = std::max(res.max_error, suite[c].run(rng, options));
      ++res.seeds;
    }
    res.passed = res.max_error <= options.tolerance;
    if (progress) progress(res);
    results.push_back(res);
  }
  return results;
}

}  // namespace aspdc
