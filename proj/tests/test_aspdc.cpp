#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "aspdc/aspdc.hpp"
#include "aspdc/ops.hpp"
#include "test_util.hpp"

namespace aspdc {
namespace {

using testing::random_tensor;

class AspdcTest : public ::testing::Test {
 protected:
  void TearDown() override { GradTape<float>::current().clear(); }
};

// Hand count: generator conv (G outputs), 3x3 deform weight and bias.
std::size_t branch_params(int w, bool zero_offset) {
  const std::size_t g = zero_offset ? 9 : 27;
  return g * w * 9 + g + std::size_t(w) * w * 9 + w;
}

std::size_t afim_params(int w, int b) { return std::size_t(b) * w * w + w + std::size_t(w) * b + b; }

void perturb_generators(AspdcModule<float>& m, Rng& rng) {
  for (auto& b : m.branches) {
    for (auto& v : b.generator.weight.data()) v = float(rng.normal(0.0, 0.05));
    for (auto& v : b.generator.bias.data()) v = float(rng.normal(0.0, 0.5));
  }
}

void perturb_afim(AspdcModule<float>& m, Rng& rng) {
  if (!m.fusion) return;
  for (auto& v : m.fusion->logits.weight.data()) v = float(rng.normal(0.0, 1.0));
  for (auto& v : m.fusion->logits.bias.data()) v = float(rng.normal(0.0, 1.0));
}

TEST_F(AspdcTest, SingleBranchHasUnitAttention) {
  Rng rng(1);
  AspdcModule<float> m(4, AspdcConfig::ablation_version(1), rng);
  ASSERT_EQ(m.branch_count(), 1);
  auto x = random_tensor(Shape{2, 4, 8, 8}, rng);
  auto out = m.forward(x);
  for (float a : out.attention.data()) EXPECT_EQ(a, 1.0f);
  for (std::size_t i = 0; i < out.features.numel(); ++i)
    EXPECT_EQ(out.features.data()[i], out.branch_outputs[0].data()[i]);
}

TEST_F(AspdcTest, IdenticalBranchOutputsPassThrough) {
  Rng rng(2);
  AspdcModule<float> m(3, AspdcConfig{}, rng);
  perturb_afim(m, rng);
  for (auto& b : m.branches) {
    std::fill(b.weight.data().begin(), b.weight.data().end(), 0.0f);
    for (int c = 0; c < 3; ++c) b.bias.data()[c] = 0.1f * float(c + 1);
  }
  auto out = m.forward(random_tensor(Shape{1, 3, 8, 8}, rng));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) EXPECT_NEAR(out.features.at(0, c, y, x), 0.1f * float(c + 1), 1e-6);
}

TEST_F(AspdcTest, FusedOutputLiesInBranchEnvelope) {
  Rng rng(3);
  AspdcModule<float> m(4, AspdcConfig{}, rng);
  perturb_generators(m, rng);
  perturb_afim(m, rng);
  auto out = m.forward(random_tensor(Shape{2, 4, 10, 10}, rng));
  ASSERT_EQ(out.branch_outputs.size(), 4u);
  for (std::size_t i = 0; i < out.features.numel(); ++i) {
    float lo = out.branch_outputs[0].data()[i];
    float hi = lo;
    for (const auto& f : out.branch_outputs) {
      lo = std::min(lo, f.data()[i]);
      hi = std::max(hi, f.data()[i]);
    }
    EXPECT_GE(out.features.data()[i], lo - 1e-5f);
    EXPECT_LE(out.features.data()[i], hi + 1e-5f);
  }
}

TEST_F(AspdcTest, ZeroLogitLayerGivesUniformAttention) {
  Rng rng(4);
  AspdcModule<float> m(4, AspdcConfig{}, rng);
  ASSERT_TRUE(m.fusion.has_value());
  m.fusion->logits.zero_init();
  auto out = m.forward(random_tensor(Shape{1, 4, 6, 6}, rng));
  for (float a : out.attention.data()) EXPECT_FLOAT_EQ(a, 0.25f);
}

TEST_F(AspdcTest, AttentionSumsToOneOnRandomForwards) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    AspdcModule<float> m(4, AspdcConfig{}, rng);
    perturb_generators(m, rng);
    perturb_afim(m, rng);
    auto a = m.forward(random_tensor(Shape{1, 4, 8, 8}, rng, -3.0, 3.0)).attention;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        double s = 0.0;
        for (int c = 0; c < a.c(); ++c) {
          EXPECT_GT(a.at(0, c, y, x), 0.0f);
          EXPECT_LT(a.at(0, c, y, x), 1.0f);
          s += a.at(0, c, y, x);
        }
        EXPECT_NEAR(s, 1.0, 1e-5);
      }
  }
}

TEST_F(AspdcTest, AfimRejectsMismatchedBranches) {
  Rng rng(6);
  Afim<float> a(2, 2, rng);
  std::vector<Tensor> parts{Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 2, 4, 5})};
  EXPECT_THROW(afim(a, std::span<const Tensor>(parts)), DimensionError);
}

TEST_F(AspdcTest, EmptyBranchSetIsConfigError) {
  AspdcConfig cfg;
  cfg.branch_enabled = {false, false, false, false};
  EXPECT_THROW(cfg.validate(), ConfigError);
  Rng rng(7);
  EXPECT_THROW(AspdcModule<float>(4, cfg, rng), ConfigError);
}

TEST_F(AspdcTest, ModuleOneAlwaysRunsWithoutOffsets) {
  for (int v = 1; v <= 12; ++v) {
    const auto branches = AspdcConfig::ablation_version(v).branches();
    ASSERT_FALSE(branches.empty());
    EXPECT_EQ(branches[0].module, 1);
    EXPECT_TRUE(branches[0].zero_offset);
    for (std::size_t i = 1; i < branches.size(); ++i) EXPECT_FALSE(branches[i].zero_offset);
  }
}

TEST_F(AspdcTest, AblationParameterCounts) {
  const int w = 8;
  Rng rng(8);
  AspdcModule<float> v1(w, AspdcConfig::ablation_version(1), rng);
  ParamList<float> p1;
  v1.collect(p1, "m");
  EXPECT_EQ(parameter_count(p1), branch_params(w, true));
  EXPECT_FALSE(v1.fusion.has_value());

  AspdcModule<float> v9(w, AspdcConfig::ablation_version(9), rng);
  ParamList<float> p9;
  v9.collect(p9, "m");
  EXPECT_EQ(parameter_count(p9), branch_params(w, true) + 3 * branch_params(w, false) + afim_params(w, 4));
  ASSERT_EQ(v9.branch_count(), 4);
  const int expect_dil[] = {1, 2, 2, 2};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(v9.branches[i].dilation, expect_dil[i]);

  AspdcModule<float> v12(w, AspdcConfig::ablation_version(12), rng);
  ParamList<float> p12;
  v12.collect(p12, "m");
  EXPECT_EQ(parameter_count(p12), branch_params(w, true) + 3 * branch_params(w, false) + afim_params(w, 4));
  const int full_dil[] = {1, 1, 2, 4};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(v12.branches[i].dilation, full_dil[i]);

  AspdcModule<float> v11(w, AspdcConfig::ablation_version(11), rng);
  ParamList<float> p11;
  v11.collect(p11, "m");
  EXPECT_EQ(parameter_count(p11), branch_params(w, true) + 3 * branch_params(w, false));

  AspdcModule<float> v6(w, AspdcConfig::ablation_version(6), rng);
  ASSERT_EQ(v6.branch_count(), 3);
  EXPECT_EQ(v6.branches[1].dilation, 1);
  EXPECT_EQ(v6.branches[2].dilation, 4);
}

TEST_F(AspdcTest, DisablingFusionKeepsBranchOutputs) {
  Rng a_rng(9);
  Rng b_rng(9);
  AspdcConfig off;
  off.afim_enabled = false;
  AspdcModule<float> with(4, AspdcConfig{}, a_rng);
  AspdcModule<float> without(4, off, b_rng);
  for (std::size_t i = 0; i < with.branches.size(); ++i) {
    auto& src = with.branches[i];
    auto& dst = without.branches[i];
    std::copy(src.weight.data().begin(), src.weight.data().end(), dst.weight.data().begin());
    std::copy(src.bias.data().begin(), src.bias.data().end(), dst.bias.data().begin());
  }
  Rng rng(10);
  auto x = random_tensor(Shape{1, 4, 8, 8}, rng);
  auto o1 = with.forward(x);
  auto o2 = without.forward(x);
  for (std::size_t i = 0; i < o1.branch_outputs.size(); ++i)
    for (std::size_t j = 0; j < x.numel(); ++j) EXPECT_EQ(o1.branch_outputs[i].data()[j], o2.branch_outputs[i].data()[j]);
  // Without fusion the output is the plain branch mean.
  for (std::size_t j = 0; j < x.numel(); ++j) {
    double m = 0.0;
    for (const auto& f : o2.branch_outputs) m += f.data()[j];
    EXPECT_NEAR(o2.features.data()[j], m / 4.0, 1e-6);
  }
}

TEST_F(AspdcTest, SingleModuleStackIsReducedModuleOutput) {
  Rng rng(11);
  AspdcStack<float> stack(4, 1, AspdcConfig{}, rng);
  auto x = random_tensor(Shape{1, 4, 8, 8}, rng);
  auto out = stack.forward(x);
  auto expect = stack.reduce(stack.modules[0].forward(x).features);
  for (std::size_t i = 0; i < expect.numel(); ++i) EXPECT_EQ(out.features.data()[i], expect.data()[i]);
}

TEST_F(AspdcTest, StackKeepsSpatialSize) {
  Rng rng(12);
  for (int n : {1, 2, 3}) {
    AspdcStack<float> stack(4, n, AspdcConfig{}, rng);
    auto out = stack.forward(random_tensor(Shape{2, 4, 12, 10}, rng));
    EXPECT_EQ(out.features.shape(), (Shape{2, 4, 12, 10}));
    EXPECT_EQ(out.attention.size(), std::size_t(n));
  }
}

TEST_F(AspdcTest, GradientReachesEveryModuleParameter) {
  Rng rng(13);
  AspdcStack<float> stack(4, 3, AspdcConfig{}, rng);
  for (auto& m : stack.modules) {
    perturb_generators(m, rng);
    perturb_afim(m, rng);
  }
  ParamList<float> params;
  stack.collect(params, "stack");
  auto x = random_tensor(Shape{1, 4, 8, 8}, rng);
  auto target = random_tensor(Shape{1, 4, 8, 8}, rng);
  backward(mse(stack.forward(x).features, target));
  for (const auto& p : params) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    double norm = 0.0;
    for (float g : p.tensor.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

}  // namespace
}  // namespace aspdc
