#include <benchmark/benchmark.h>

#include "aspdc/deblur_net.hpp"
#include "aspdc/deform.hpp"
#include "aspdc/ops.hpp"
#include "aspdc/reblur_net.hpp"
#include "aspdc/rng.hpp"

namespace {

using namespace aspdc;

Tensor random(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (auto& v : t.data()) v = float(rng.uniform(lo, hi));
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const int c = int(state.range(0));
  Rng rng(1);
  const auto x = random({1, c, 32, 32}, rng);
  const auto w = random({c, c, 3, 3}, rng);
  const auto b = random({1, c, 1, 1}, rng);
  NoGradGuard<float> guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1, 1));
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Arg(64);

void BM_DeformConv2d(benchmark::State& state) {
  const int c = int(state.range(0));
  Rng rng(2);
  const auto x = random({1, c, 32, 32}, rng);
  const auto w = random({c, c, 3, 3}, rng);
  const auto b = random({1, c, 1, 1}, rng);
  const auto off = random({1, 18, 32, 32}, rng, -2.0, 2.0);
  const auto mod = random({1, 9, 32, 32}, rng, 0.0, 1.0);
  NoGradGuard<float> guard;
  for (auto _ : state) benchmark::DoNotOptimize(deform_conv2d(x, w, off, mod, 2, false, b));
}
BENCHMARK(BM_DeformConv2d)->Arg(16)->Arg(32)->Arg(64);

void BM_DeformConv2dBackward(benchmark::State& state) {
  Rng rng(3);
  auto x = random({1, 32, 32, 32}, rng);
  auto w = random({32, 32, 3, 3}, rng);
  auto off = random({1, 18, 32, 32}, rng, -2.0, 2.0);
  auto mod = random({1, 9, 32, 32}, rng, 0.0, 1.0);
  for (auto* t : {&x, &w, &off, &mod}) t->set_requires_grad(true);
  for (auto _ : state) {
    const Tensor y = deform_conv2d(x, w, off, mod, 2, false, Tensor());
    backward(sum(y));
  }
}
BENCHMARK(BM_DeformConv2dBackward);

void BM_DynamicFilter(benchmark::State& state) {
  Rng rng(4);
  const auto f = random({1, 16, 64, 64}, rng);
  const auto k = random({1, 9, 64, 64}, rng);
  NoGradGuard<float> guard;
  for (auto _ : state) benchmark::DoNotOptimize(apply_dynamic_filter(f, k));
}
BENCHMARK(BM_DynamicFilter);

void BM_DeblurInfer(benchmark::State& state) {
  DeblurNetConfig cfg;
  cfg.base_width = int(state.range(0));
  cfg.n_modules = 2;
  const DeblurNet<float> net(cfg, 1);
  Rng rng(5);
  const auto x = random({1, 3, 64, 64}, rng, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(net.infer(x));
}
BENCHMARK(BM_DeblurInfer)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
