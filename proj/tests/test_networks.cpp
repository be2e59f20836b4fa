#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "aspdc/deblur_net.hpp"
#include "aspdc/ops.hpp"
#include "aspdc/reblur_net.hpp"
#include "test_util.hpp"

namespace aspdc {
namespace {

using testing::random_tensor;

class NetworkTest : public ::testing::Test {
 protected:
  void TearDown() override { GradTape<float>::current().clear(); }
};

DeblurNetConfig small_deblur(int width = 2, int modules = 2) {
  DeblurNetConfig c;
  c.base_width = width;
  c.n_modules = modules;
  return c;
}

double grad_l1(const Tensor& t) {
  double s = 0.0;
  for (float g : t.grad()) s += std::abs(g);
  return s;
}

TEST_F(NetworkTest, ZeroTailReturnsInputBitForBit) {
  DeblurNet<float> net(small_deblur(), 3);
  Rng rng(1);
  auto x = random_tensor(Shape{2, 3, 16, 20}, rng, 0.0, 1.0);
  auto out = net.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(out.image.data()[i], x.data()[i]);
  auto inf = net.infer(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(inf.data()[i], x.data()[i]);
}

TEST_F(NetworkTest, DeblurKeepsShape) {
  Rng rng(2);
  DeblurNet<float> net(small_deblur(2, 1), 1);
  for (int s : {64, 256}) {
    auto x = random_tensor(Shape{1, 3, s, s}, rng, 0.0, 1.0);
    EXPECT_EQ(net.infer(x).shape(), x.shape());
  }
}

TEST_F(NetworkTest, DeblurRejectsIndivisibleSize) {
  DeblurNet<float> net(small_deblur(), 1);
  EXPECT_THROW(net.forward(Tensor(Shape{1, 3, 18, 16})), DimensionError);
  EXPECT_THROW(net.forward(Tensor(Shape{1, 4, 16, 16})), DimensionError);
}

TEST_F(NetworkTest, DeblurLossValues) {
  Tensor a(Shape{1, 3, 4, 4}, 0.0f);
  Tensor b(Shape{1, 3, 4, 4}, 1.0f);
  EXPECT_EQ(deblurring_loss(a, a).item(), 0.0f);
  EXPECT_FLOAT_EQ(deblurring_loss(a, b).item(), 1.0f);
}

TEST_F(NetworkTest, DeblurGradientReachesEveryParameter) {
  DeblurNet<float> net(small_deblur(2, 2), 5);
  Rng rng(3);
  for (auto& v : net.out.weight.data()) v = float(rng.normal(0.0, 0.1));
  for (auto& m : net.stack.modules) {
    for (auto& b : m.branches)
      for (auto& v : b.generator.weight.data()) v = float(rng.normal(0.0, 0.05));
  }
  auto x = random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
  auto y = random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
  backward(deblurring_loss(deblur_forward(net, x), y));
  for (const auto& p : net.parameters()) EXPECT_GT(grad_l1(p.tensor), 0.0) << p.name;
}

TEST_F(NetworkTest, DeblurAttentionHasOneMapPerModule) {
  DeblurNet<float> net(small_deblur(2, 3), 1);
  Rng rng(4);
  auto out = net.forward(random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0));
  ASSERT_EQ(out.attention.size(), 3u);
  for (const auto& a : out.attention) EXPECT_EQ(a.shape(), (Shape{1, 4, 4, 4}));
}

TEST_F(NetworkTest, DynamicFilterIdentityAndAverage) {
  Rng rng(5);
  auto f = random_tensor(Shape{1, 2, 5, 5}, rng);
  Tensor delta(Shape{1, 9, 5, 5});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) delta.at(0, 4, y, x) = 1.0f;
  auto same = apply_dynamic_filter(f, delta);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(same.data()[i], f.data()[i]);

  Tensor constant(Shape{1, 2, 5, 5}, 0.6f);
  Tensor box(Shape{1, 9, 5, 5}, 1.0f / 9.0f);
  auto avg = apply_dynamic_filter(constant, box);
  for (int c = 0; c < 2; ++c)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) EXPECT_NEAR(avg.at(0, c, y, x), 0.6f, 1e-6);
  // Corners see four of nine taps under zero padding.
  EXPECT_NEAR(avg.at(0, 0, 0, 0), 0.6f * 4.0f / 9.0f, 1e-6);
}

TEST_F(NetworkTest, DynamicFilterMatchesDirectSum) {
  Rng rng(6);
  auto f = random_tensor(Shape{2, 3, 6, 7}, rng);
  auto k = random_tensor(Shape{2, 9, 6, 7}, rng);
  auto out = apply_dynamic_filter(f, k);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 7; ++x) {
          double acc = 0.0;
          for (int t = 0; t < 9; ++t) {
            const int yy = y + t / 3 - 1;
            const int xx = x + t % 3 - 1;
            if (yy < 0 || yy >= 6 || xx < 0 || xx >= 7) continue;
            acc += double(k.at(n, t, y, x)) * f.at(n, c, yy, xx);
          }
          EXPECT_NEAR(out.at(n, c, y, x), acc, 1e-5);
        }
  EXPECT_THROW(apply_dynamic_filter(f, Tensor(Shape{2, 8, 6, 7})), DimensionError);
}

ReblurNetConfig small_reblur() { return ReblurNetConfig{4, 2}; }

TEST_F(NetworkTest, ReblurKeepsShapeAndRejectsMismatch) {
  ReblurNet<float> net(small_reblur(), 2);
  Rng rng(7);
  auto s = random_tensor(Shape{1, 3, 16, 12}, rng, 0.0, 1.0);
  auto b = random_tensor(Shape{1, 3, 16, 12}, rng, 0.0, 1.0);
  EXPECT_EQ(net.infer(s, b).shape(), s.shape());
  EXPECT_THROW(net.forward(s, Tensor(Shape{1, 3, 16, 16})), DimensionError);
  EXPECT_THROW(net.forward(Tensor(Shape{1, 3, 10, 12}), Tensor(Shape{1, 3, 10, 12})), DimensionError);
}

TEST_F(NetworkTest, ReblurStartsAtSharpInput) {
  ReblurNet<float> net(small_reblur(), 2);
  Rng rng(8);
  auto s = random_tensor(Shape{1, 3, 8, 8}, rng, 0.0, 1.0);
  auto b = random_tensor(Shape{1, 3, 8, 8}, rng, 0.0, 1.0);
  auto r = net.forward(s, b);
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(r.data()[i], s.data()[i]);
  EXPECT_EQ(reblurring_loss(b, b).item(), 0.0f);
}

TEST_F(NetworkTest, ReblurGradientReachesSharpInput) {
  ReblurNet<float> net(small_reblur(), 9);
  Rng rng(9);
  for (auto& v : net.out.weight.data()) v = float(rng.normal(0.0, 0.1));
  auto s = random_tensor(Shape{1, 3, 8, 8}, rng, 0.0, 1.0).set_requires_grad();
  auto b = random_tensor(Shape{1, 3, 8, 8}, rng, 0.0, 1.0);
  backward(reblurring_loss(net.forward(s, b), b));
  EXPECT_GT(grad_l1(s), 0.0);
  for (const auto& p : net.parameters()) EXPECT_GT(grad_l1(p.tensor), 0.0) << p.name;
}

TEST_F(NetworkTest, ReblurCountsSharedTrunkOnce) {
  const int c = 4;
  ReblurNet<float> net(ReblurNetConfig{c, 2}, 1);
  auto conv = [](std::size_t in, std::size_t out) { return in * out * 9 + out; };
  std::size_t expect = conv(6, c);
  expect += conv(c, 2 * c) + 2 * conv(2 * c, 2 * c);
  expect += conv(2 * c, 4 * c) + 2 * conv(4 * c, 4 * c);
  expect += conv(4 * c, 2 * c) + 2 * conv(2 * c, 2 * c);
  expect += conv(2 * c, c) + 2 * conv(c, c);
  expect += conv(2 * c, 9) + conv(4 * c, 9) + conv(2 * c, 9) + conv(c, 9);
  expect += conv(c, 3);
  EXPECT_EQ(parameter_count(net.parameters()), expect);
}

// Forward of the two-branch layout with the upper and lower trunks taken
// from separate networks, so the trunk weights are untied.
Tensor untied_forward(const ReblurNet<float>& upper_net, const ReblurNet<float>& lower_net, const Tensor& sharp,
                      const Tensor& blurred) {
  auto stage = [](const ReblurNet<float>& net, std::size_t i, const Tensor& x) {
    const std::size_t ne = net.encoder.size();
    if (i < ne) return net.encoder[i].block(relu(net.encoder[i].down(x)));
    return net.decoder[i - ne].block(relu(net.decoder[i - ne].up(x)));
  };
  auto upper = relu(upper_net.stem(concat_channels<float>({blurred, sharp})));
  auto lower = relu(lower_net.stem(concat_channels<float>({sharp, sharp})));
  for (std::size_t i = 0; i < std::size_t(upper_net.stage_count()); ++i) {
    upper = stage(upper_net, i, upper);
    lower = stage(lower_net, i, lower);
    lower = apply_dynamic_filter(lower, upper_net.filter_gen[i](upper));
  }
  return add(sharp, lower_net.out(lower));
}

TEST_F(NetworkTest, SharedTrunkGradientIsSumOverBothBranches) {
  const ReblurNetConfig cfg{3, 2};
  ReblurNet<float> tied(cfg, 21);
  ReblurNet<float> upper(cfg, 21);
  ReblurNet<float> lower(cfg, 21);
  Rng rng(10);
  for (auto* n : {&tied, &upper, &lower}) {
    Rng w(99);
    for (auto& v : n->out.weight.data()) v = float(w.normal(0.0, 0.2));
  }
  auto s = random_tensor(Shape{1, 3, 8, 8}, rng, 0.0, 1.0);
  auto b = random_tensor(Shape{1, 3, 8, 8}, rng, 0.0, 1.0);
  // One tape per pass: backward() clears the tape.
  auto r1 = tied.forward(s, b);
  backward(reblurring_loss(r1, b));
  auto r2 = untied_forward(upper, lower, s, b);
  backward(reblurring_loss(r2, b));
  for (std::size_t i = 0; i < r1.numel(); ++i) ASSERT_NEAR(r1.data()[i], r2.data()[i], 1e-6);

  const auto pt = tied.parameters();
  const auto pu = upper.parameters();
  const auto pl = lower.parameters();
  ASSERT_EQ(pt.size(), pu.size());
  for (std::size_t i = 0; i < pt.size(); ++i) {
    ASSERT_TRUE(pt[i].tensor.has_grad()) << pt[i].name;
    for (std::size_t j = 0; j < pt[i].tensor.numel(); ++j) {
      const double gu = pu[i].tensor.has_grad() ? pu[i].tensor.grad()[j] : 0.0;
      const double gl = pl[i].tensor.has_grad() ? pl[i].tensor.grad()[j] : 0.0;
      const double gt = pt[i].tensor.grad()[j];
      ASSERT_NEAR(gt, gu + gl, 1e-5 * std::max(1.0, std::abs(gt))) << pt[i].name << "[" << j << "]";
    }
  }
}

}  // namespace
}  // namespace aspdc
