// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Optional arguments select criteria by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "aspdc/blur_synth.hpp"
#include "aspdc/checkpoint.hpp"
#include "aspdc/gradcheck.hpp"
#include "aspdc/metrics.hpp"
#include "aspdc/ops.hpp"
#include "aspdc/trainer.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace aspdc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Desk-scale setup shared by the learning criteria.
constexpr int kDeskPairs = 4;
constexpr int kDeskSize = 64;
constexpr std::uint64_t kDeskCorpusSeed = 7;
constexpr int kDeskSteps = 2000;
constexpr double kDeskLr = 2e-3;
constexpr int kDeskHalving = 1500;
constexpr int kDeskBatch = 4;
constexpr double kReblurLr = 5e-4;
constexpr std::uint64_t kDeskNetSeed = 1;
constexpr int kValidationPairs = 2;
// Anti-collapse floor: mean |I_r - I_b| on the 0-1 scale when the reblur net
// is fed an unrelated sharp image.
constexpr double kCollapseFloor = 0.02;

CorpusConfig desk_corpus() {
  CorpusConfig c;
  c.seed = kDeskCorpusSeed;
  c.count = kDeskPairs + kValidationPairs;
  c.size = kDeskSize;
  c.max_motion = 12.0;
  return c;
}

TrainData desk_data() {
  const auto cfg = desk_corpus();
  TrainData d;
  for (int i = 0; i < cfg.count; ++i) (i < kDeskPairs ? d.train : d.validation).push_back(make_pair(cfg, i));
  return d;
}

DeblurNetConfig desk_deblur() {
  DeblurNetConfig c;
  c.base_width = 8;
  c.n_modules = 2;
  return c;
}

TrainConfig desk_train(int steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = kDeskBatch;
  t.crop = kDeskSize;
  t.schedule = Schedule{kDeskLr, kDeskHalving, 1e-6};
  t.fit_schedule = false;
  t.eval_every = 0;
  t.seed = 1;
  return t;
}

void perturb(DeblurNet<float>& net, Rng& rng) {
  for (auto& m : net.stack.modules) {
    for (auto& b : m.branches) {
      for (auto& v : b.generator.weight.data()) v = float(rng.normal(0.0, 0.05));
      for (auto& v : b.generator.bias.data()) v = float(rng.normal(0.0, 0.5));
    }
    if (m.fusion) {
      for (auto& v : m.fusion->logits.weight.data()) v = float(rng.normal(0.0, 1.0));
    }
  }
}

double max_sum_error(const std::vector<Tensor>& maps) {
  double worst = 0.0;
  for (const auto& a : maps) {
    const Shape& s = a.shape();
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double sum = 0.0;
          for (int c = 0; c < s.c; ++c) sum += a.at(n, c, y, x);
          worst = std::max(worst, std::abs(sum - 1.0));
        }
  }
  return worst;
}

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  GradcheckOptions opts;
  opts.seeds = 5;
  const auto results = run_gradcheck_suite(opts);
  const double secs = seconds_since(t0);
  int failed = 0;
  double worst = 0.0;
  std::string names;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_error);
    if (!r.passed) {
      ++failed;
      names += " " + r.name;
    }
  }
  const bool ok = failed == 0 && secs < 300.0 && results.size() >= 25;
  return {ok, fmt("%zu checks x 5 seeds, %d failed, max rel error %.2e, %.1f s%s", results.size(), failed, worst,
                  secs, names.c_str())};
}

Verdict reduction_equivalence() {
  Rng rng(2024);
  double worst = 0.0;
  const int dilations[] = {1, 2, 4};
  for (int i = 0; i < 20; ++i) {
    const int d = dilations[i % 3];
    const int cin = rng.uniform_int(1, 4);
    const int cout = rng.uniform_int(1, 4);
    const Shape s{rng.uniform_int(1, 2), cin, rng.uniform_int(5, 14), rng.uniform_int(5, 14)};
    const auto x = testing::random_tensor(s, rng);
    const auto w = testing::random_tensor(Shape{cout, cin, 3, 3}, rng);
    const auto b = testing::random_tensor(Shape{1, cout, 1, 1}, rng);
    const Tensor off(Shape{s.n, 18, s.h, s.w});
    const Tensor mod(Shape{s.n, 9, s.h, s.w}, 1.0f);
    worst = std::max(worst, testing::max_abs_diff(deform_conv2d(x, w, off, mod, d, false, b), conv2d(x, w, b, 1, d, d)));
  }
  return {worst <= 1e-5, fmt("20 cases, max abs difference %.3e", worst)};
}

Verdict attention_normalisation() {
  Rng rng(99);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    DeblurNet<float> net(desk_deblur(), 1000 + i);
    perturb(net, rng);
    const auto x = testing::random_tensor(Shape{1, 3, 32, 32}, rng, 0.0, 1.0);
    NoGradGuard<float> guard;
    worst = std::max(worst, max_sum_error(net.forward(x).attention));
  }
  const double random_worst = worst;

  auto data = desk_data();
  DeblurNet<float> net(desk_deblur(), kDeskNetSeed);
  auto cfg = desk_train(500);
  cfg.batch_size = 2;
  cfg.schedule.lr0 = 1e-3;
  int checked = 0;
  double train_worst = 0.0;
  cfg.on_step = [&](const StepEvent& e) {
    train_worst = std::max(train_worst, max_sum_error(*e.attention));
    ++checked;
  };
  train_deblur(net, data, cfg);
  worst = std::max(worst, train_worst);
  return {worst <= 1e-5 && checked == 500,
          fmt("100 random forwards max |sum-1| %.2e; %d training steps max |sum-1| %.2e", random_worst, checked,
              train_worst)};
}

Verdict residual_identity() {
  auto data = desk_data();
  DeblurNet<float> net(desk_deblur(), 5);
  bool exact = true;
  for (const auto& p : data.validation) {
    const Tensor x = to_tensor(p.blurred);
    const Tensor y = net.forward(x).image;
    for (std::size_t i = 0; i < x.numel(); ++i) exact = exact && y.data()[i] == x.data()[i];
  }
  double expect = 0.0;
  for (const auto& p : data.validation) expect += psnr(p.blurred, p.sharp);
  expect /= double(data.validation.size());
  const auto r = train_deblur(net, data, desk_train(1));
  const bool same = r.log.initial_psnr == expect;
  return {exact && same, fmt("output == input bitwise: %s; step-0 validation PSNR %.6f dB vs PSNR(blurred, sharp) %.6f dB",
                             exact ? "yes" : "no", r.log.initial_psnr, expect)};
}

Verdict blur_oracles() {
  Rng rng(5150);
  // Zero motion.
  const Image s0 = procedural_image(32, 32, rng);
  const auto still = MotionField::uniform(32, 32, 0.0f, 0.0f);
  const bool id_t = blur_temporal(s0, still, 15, 1.0).pixels == s0.pixels;
  const bool id_k = blur_kernel_matrix(s0, SparseKernelMatrix::from_motion(still)).pixels == s0.pixels;

  // Cross-model agreement on linear motion, interior crop.
  double worst_rel = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Image s = procedural_image(48, 48, rng);
    const double angle = rng.uniform(0.0, 6.283185307179586);
    const double len = rng.uniform(2.0, 12.0);
    const auto field = MotionField::uniform(48, 48, float(len * std::sin(angle)), float(len * std::cos(angle)));
    const Image t = blur_temporal(s, field, 31, 1.0);
    const Image k = blur_kernel_matrix(s, SparseKernelMatrix::from_motion(field));
    const int m = int(std::ceil(len / 2)) + 2;
    const Image ti = crop(t, m, m, 48 - 2 * m, 48 - 2 * m);
    const Image ki = crop(k, m, m, 48 - 2 * m, 48 - 2 * m);
    double diff = 0.0;
    double mean = 0.0;
    for (std::size_t j = 0; j < ti.pixels.size(); ++j) {
      diff += std::abs(double(ti.pixels[j]) - ki.pixels[j]);
      mean += ti.pixels[j];
    }
    worst_rel = std::max(worst_rel, diff / mean);
  }

  // Shift-and-average oracle: 6 px horizontal travel over 7 frames.
  const Image s = procedural_image(24, 40, rng);
  const Image b = blur_temporal(s, MotionField::uniform(24, 40, 0.0f, 6.0f), 7, 1.0);
  double worst_shift = 0.0;
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 40; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -3; k <= 3; ++k) acc += (x + k >= 0 && x + k < 40) ? s.at(y, x + k, c) : 0.0;
        worst_shift = std::max(worst_shift, std::abs(acc / 7.0 - b.at(y, x, c)));
      }
  const bool ok = id_t && id_k && worst_rel <= 0.02 && worst_shift <= 1e-5;
  return {ok, fmt("zero motion identity: temporal %s, kernel %s; cross-model worst mean abs error %.2f%%; "
                  "shift-and-average max error %.2e",
                  id_t ? "yes" : "no", id_k ? "yes" : "no", 100.0 * worst_rel, worst_shift)};
}

struct DeskRuns {
  TrainData data;
  std::optional<DeblurNet<float>> deblur;
  std::optional<ReblurNet<float>> reblur;
  Quality deblur_before;
  Quality deblur_after;
  double deblur_seconds = 0.0;
};

DeskRuns& desk() {
  static DeskRuns runs{desk_data(), std::nullopt, std::nullopt, {}, {}, 0.0};
  return runs;
}

DeblurNet<float>& trained_deblur() {
  auto& d = desk();
  if (!d.deblur) {
    d.deblur.emplace(desk_deblur(), kDeskNetSeed);
    d.deblur_before = evaluate_deblur(*d.deblur, d.data.train);
    const auto t0 = Clock::now();
    train_deblur(*d.deblur, d.data, desk_train(kDeskSteps));
    d.deblur_seconds = seconds_since(t0);
    d.deblur_after = evaluate_deblur(*d.deblur, d.data.train);
  }
  return *d.deblur;
}

ReblurNet<float>& trained_reblur() {
  auto& d = desk();
  if (!d.reblur) {
    d.reblur.emplace(ReblurNetConfig{}, kDeskNetSeed);
    auto cfg = desk_train(kDeskSteps);
    cfg.schedule.lr0 = kReblurLr;
    train_reblur(*d.reblur, d.data, cfg);
  }
  return *d.reblur;
}

Verdict desk_deblur_learning() {
  trained_deblur();
  const auto& d = desk();
  const double ratio = d.deblur_before.mse / d.deblur_after.mse;
  const double gain = d.deblur_after.psnr - d.deblur_before.psnr;
  const bool ok = ratio >= 10.0 && gain >= 1.0 && d.deblur_seconds < 1800.0;
  return {ok, fmt("train MSE %.3e -> %.3e (%.2fx drop); PSNR %.2f -> %.2f dB (+%.2f); %.0f s", d.deblur_before.mse,
                  d.deblur_after.mse, ratio, d.deblur_before.psnr, d.deblur_after.psnr, gain, d.deblur_seconds)};
}

double copy_sharp_mse(std::span<const CorpusPair> pairs) {
  double total = 0.0;
  for (const auto& p : pairs) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.sharp.pixels.size(); ++i) {
      const double e = double(p.sharp.pixels[i]) - p.blurred.pixels[i];
      acc += e * e;
    }
    total += acc / double(p.sharp.pixels.size());
  }
  return total / double(pairs.size());
}

Verdict desk_reblur_learning() {
  const auto t0 = Clock::now();
  const auto& net = trained_reblur();
  const double secs = seconds_since(t0);
  const auto& d = desk();
  const double train_mse = evaluate_reblur(net, d.data.train).mse;
  const double train_base = copy_sharp_mse(d.data.train);
  const double val_mse = evaluate_reblur(net, d.data.validation).mse;
  const double val_base = copy_sharp_mse(d.data.validation);
  const double probe = reblur_collapse_probe(net, d.data.train);
  // Held-out numbers are informational: four training pairs do not cover unseen motion.
  const bool ok = train_mse < train_base && probe > kCollapseFloor;
  return {ok, fmt("reblur MSE train %.3e vs copy-sharp %.3e (held-out %.3e vs %.3e); collapse probe %.4f (floor %.2f); "
                  "%.0f s",
                  train_mse, train_base, val_mse, val_base, probe, kCollapseFloor, secs)};
}

Verdict consistency_finetune() {
  auto& d = desk();
  DeblurNet<float> deblur = load_deblur(deblur_checkpoint(trained_deblur()));
  ReblurNet<float>& reblur = trained_reblur();

  const double cons_before = reblur_consistency(deblur, reblur, d.data.train);
  const double psnr_before = evaluate_deblur(deblur, d.data.validation).psnr;
  TrainConfig cfg = desk_train(200);
  cfg.schedule = Schedule::finetune();
  cfg.fit_schedule = true;
  finetune_consistency(deblur, reblur, d.data, cfg, ConsistencyConfig{0.1, true});
  const double cons_after = reblur_consistency(deblur, reblur, d.data.train);
  const double psnr_after = evaluate_deblur(deblur, d.data.validation).psnr;

  // One step with lambda = 0 against one pure deblurring step.
  DeblurNet<float> a = load_deblur(deblur_checkpoint(trained_deblur()));
  DeblurNet<float> b = load_deblur(deblur_checkpoint(trained_deblur()));
  const Tensor blurred = to_tensor(std::vector<Image>{d.data.train[0].blurred, d.data.train[1].blurred});
  const Tensor sharp = to_tensor(std::vector<Image>{d.data.train[0].sharp, d.data.train[1].sharp});
  std::vector<bool> grad_flags;
  for (const auto& p : reblur.parameters()) {
    grad_flags.push_back(p.tensor.requires_grad());
    Tensor(p.tensor).set_requires_grad(false);
  }
  Adam<float> adam_a(a.parameters());
  Adam<float> adam_b(b.parameters());
  backward(consistency_loss(a, reblur, blurred, sharp, 0.0).total);
  adam_a.step(1e-5);
  backward(deblurring_loss(deblur_forward(b, blurred), sharp));
  adam_b.step(1e-5);
  const auto rp = reblur.parameters();
  for (std::size_t i = 0; i < rp.size(); ++i) Tensor(rp[i].tensor).set_requires_grad(grad_flags[i]);
  double step_diff = 0.0;
  double moved = 0.0;
  const DeblurNet<float> start = load_deblur(deblur_checkpoint(trained_deblur()));
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  const auto p0 = start.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    step_diff = std::max(step_diff, testing::max_abs_diff(pa[i].tensor, pb[i].tensor));
    moved = std::max(moved, testing::max_abs_diff(pb[i].tensor, p0[i].tensor));
  }

  const bool ok = cons_after < cons_before && psnr_after - psnr_before >= -0.05 && step_diff <= 1e-6 && moved > 0.0;
  return {ok, fmt("reblur consistency %.4e -> %.4e; validation PSNR %.3f -> %.3f dB (%+.3f); lambda=0 step max "
                  "parameter difference %.2e (step size %.2e)",
                  cons_before, cons_after, psnr_before, psnr_after, psnr_after - psnr_before, step_diff, moved)};
}

Verdict metric_correctness() {
  const double p = psnr(Image(1, 1, 0.0f), Image(1, 1, 0.5f));
  Rng rng(31);
  Image a(24, 24);
  for (auto& v : a.pixels) v = float(rng.uniform());
  const double self = ssim(a, a);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    Image x(16 + i, 20);
    for (int yy = 0; yy < x.height; ++yy)
      for (int xx = 0; xx < x.width; ++xx) {
        const float v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
        for (int c = 0; c < 3; ++c) x.at(yy, xx, c) = v;
      }
    Image neg = x;
    for (auto& v : neg.pixels) v = 1.0f - v;
    Image noisy = x;
    for (auto& v : noisy.pixels) v = std::clamp(v + float(rng.normal(0.0, 0.2)), 0.0f, 1.0f);
    worst = std::max(worst, std::abs(ssim(x, neg) - testing::brute_force_ssim(x, neg)));
    worst = std::max(worst, std::abs(ssim(x, noisy) - testing::brute_force_ssim(x, noisy)));
  }
  const bool ok = std::abs(p - 6.0206) < 5e-5 && std::abs(self - 1.0) <= 1e-9 && worst <= 1e-6 &&
                  std::abs(psnr(Image(4, 4, 0.5f), Image(4, 4, 0.6f)) - 20.0) < 1e-4;
  return {ok, fmt("PSNR(0, 0.5) %.4f dB; SSIM(a, a) %.12f; brute-force SSIM max difference %.2e", p, self, worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Verdict determinism() {
  auto data = desk_data();
  auto run = [&] {
    DeblurNet<float> net(desk_deblur(), 3);
    auto cfg = desk_train(60);
    cfg.batch_size = 2;
    cfg.crop = 32;
    return train_deblur(net, data, cfg).log.step_losses;
  };
  const auto l1 = run();
  const auto l2 = run();
  const bool same_loss = l1 == l2 && !l1.empty();

  CorpusConfig c;
  c.count = 4;
  c.size = 48;
  c.seed = 77;
  const auto base = fs::temp_directory_path() / "aspdc_acceptance_corpus";
  fs::remove_all(base);
  make_corpus(c, base / "a");
  make_corpus(c, base / "b");
  int files = 0;
  bool same_bytes = true;
  for (const auto& e : fs::directory_iterator(base / "a")) {
    ++files;
    same_bytes = same_bytes && slurp(e.path()) == slurp(base / "b" / e.path().filename());
  }
  fs::remove_all(base);
  return {same_loss && same_bytes && files == 9,
          fmt("two 60-step runs identical: %s; corpus of %d files byte-identical: %s", same_loss ? "yes" : "no", files,
              same_bytes ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"reduction equivalence", reduction_equivalence},
      {"attention normalisation", attention_normalisation},
      {"residual identity", residual_identity},
      {"blur-model oracles", blur_oracles},
      {"desk-scale deblur learning", desk_deblur_learning},
      {"desk-scale reblur learning", desk_reblur_learning},
      {"consistency fine-tune", consistency_finetune},
      {"metric correctness", metric_correctness},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("[%s] %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
