#include <gtest/gtest.h>

#include <cmath>

#include "rapforge/ops.hpp"
#include "rapforge/perturb.hpp"
#include "test_util.hpp"

namespace rap::perturb {
namespace {

using rap::testing::uniform;

PerturbationBudget eps(double e) { return {e, 0.0, 1.0}; }

void expect_in_budget(const Tensor& x, const Tensor& xp, const PerturbationBudget& b) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_LE(std::abs(xp[i] - x[i]), b.epsilon) << i;
    ASSERT_GE(xp[i], b.pixel_min) << i;
    ASSERT_LE(xp[i], b.pixel_max) << i;
  }
}

TEST(Project, ClipsToUpperBand) {
  EXPECT_NEAR(project(Tensor::vector({0.5}), Tensor::vector({0.9}), eps(0.1))[0], 0.6, 1e-15);
}

TEST(Project, IdentityOnZeroPerturbation) {
  const Tensor x = uniform({2, 1, 5, 5}, 0, 1, 1);
  const Tensor y = project(x, x, eps(0.1));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Project, NearPixelFloor) {
  const Tensor x = Tensor::vector({0.05});
  const Tensor y = project(x, Tensor::vector({0.0}), eps(0.1));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_LE(std::abs(y[0] - x[0]), 0.1);
}

TEST(Project, ShapeMismatch) {
  EXPECT_THROW(project(Tensor::zeros({2, 2}), Tensor::zeros({4}), eps(0.1)), ShapeError);
}

TEST(Project, ExtremeGeneratorOutputsStayInBounds) {
  for (double e : {1.0 / 255, 10.0 / 255, 0.3, 1.0}) {
    const Tensor x = uniform({4, 1, 8, 8}, 0, 1, 2);
    for (double g : {1e9, -1e9, 0.0, 1.0}) {
      const Tensor xp = project(x, Tensor::full(x.shape(), g), eps(e));
      expect_in_budget(x, xp, eps(e));
    }
    expect_in_budget(x, project(x, uniform(x.shape(), -1e9, 1e9, 3), eps(e)), eps(e));
  }
}

TEST(Project, BudgetHoldsExactlyAcrossManyDraws) {
  // exact, no tolerance
  for (int t = 0; t < 50; ++t) {
    const double e = 1.0 / 255 * (1 + t % 30);
    const Tensor x = uniform({1, 1, 16, 16}, 0, 1, 100 + t);
    const Tensor xp = project(x, uniform(x.shape(), -2, 3, 200 + t), eps(e));
    EXPECT_LE(linf_distance(x, xp), e);
  }
}

TEST(Project, Idempotent) {
  const Tensor x = uniform({3, 1, 6, 6}, 0, 1, 4);
  const Tensor once = project(x, uniform(x.shape(), -1, 2, 5), eps(10.0 / 255));
  const Tensor twice = project(x, once, eps(10.0 / 255));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(once[i], twice[i]);
}

TEST(Project, GradientMasksOutsideBand) {
  const Tensor x = Tensor::vector({0.5, 0.5, 0.5, 0.02});
  Tensor g = Tensor::vector({0.55, 0.9, 0.1, 0.01}).set_requires_grad(true);
  backward(sum(project(x, g, eps(0.1))));
  EXPECT_EQ(g.grad()[0], 1.0);  // inside
  EXPECT_EQ(g.grad()[1], 0.0);  // above x + eps
  EXPECT_EQ(g.grad()[2], 0.0);  // below x - eps
  EXPECT_EQ(g.grad()[3], 1.0);  // inside, band clipped at 0 still contains g
}

TEST(Budget, Validation) {
  EXPECT_NO_THROW(eps(0.3).validate());
  EXPECT_THROW(eps(0.0).validate(), ConfigError);
  EXPECT_THROW(eps(-0.1).validate(), ConfigError);
  EXPECT_THROW(eps(1.5).validate(), ConfigError);
  EXPECT_NEAR(PerturbationBudget::from_255(10).epsilon, 10.0 / 255, 1e-15);
}

TEST(Kernel, SizeOneIsIdentityTap) {
  const auto k = gaussian_kernel(1, 1.0);
  ASSERT_EQ(k.weights.shape(), (Shape{1, 1}));
  EXPECT_EQ(k.weights[0], 1.0);
}

TEST(Kernel, CenterWeightSize3) {
  const auto k = gaussian_kernel(3, 1.0);
  const double expect = 1.0 / (1.0 + 4 * std::exp(-0.5) + 4 * std::exp(-1.0));
  EXPECT_NEAR(k.weights[4], expect, 1e-15);
  EXPECT_NEAR(k.weights[4], 0.20418, 1e-5);
}

TEST(Kernel, SumsToOne) {
  for (std::size_t size : {1u, 3u, 5u, 11u}) {
    const auto k = gaussian_kernel(size, 1.0);
    EXPECT_NEAR(sum(k.weights).item(), 1.0, 1e-14) << size;
  }
}

TEST(Kernel, InvalidParameters) {
  EXPECT_THROW(gaussian_kernel(0, 1.0), ConfigError);
  EXPECT_THROW(gaussian_kernel(4, 1.0), ConfigError);
  EXPECT_THROW(gaussian_kernel(3, 0.0), ConfigError);
}

TEST(Smooth, ConstantImageUnchanged) {
  const Tensor x = Tensor::full({2, 1, 9, 9}, 0.37);
  const Tensor y = smooth(x, gaussian_kernel(3, 1.0));
  ASSERT_EQ(y.shape(), x.shape());
  for (double v : y.data()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Smooth, SizeOneIsIdentity) {
  const Tensor x = uniform({1, 1, 7, 7}, 0, 1, 6);
  const Tensor y = smooth(x, gaussian_kernel(1, 1.0));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Smooth, ImpulseReproducesKernel) {
  Tensor x = Tensor::zeros({1, 1, 9, 9});
  x.mutable_data()[4 * 9 + 4] = 1.0;
  const auto k = gaussian_kernel(3, 1.0);
  const Tensor y = smooth(x, k);
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t v = 0; v < 3; ++v) EXPECT_NEAR(y[(3 + u) * 9 + 3 + v], k.weights[u * 3 + v], 1e-15);
  EXPECT_EQ(y[0], 0.0);
}

TEST(Smooth, ImageSmallerThanKernel) {
  EXPECT_THROW(smooth(Tensor::zeros({1, 1, 2, 2}), gaussian_kernel(3, 1.0)), ShapeError);
}

TEST(Smooth, ThenProjectKeepsBudget) {
  const Tensor x = uniform({2, 1, 10, 10}, 0, 1, 7);
  const Tensor g = uniform(x.shape(), -3, 3, 8);
  const Tensor xp = project(x, smooth(g, gaussian_kernel(3, 1.0)), eps(10.0 / 255));
  expect_in_budget(x, xp, eps(10.0 / 255));
}

TEST(Smooth, Differentiable) {
  rap::testing::expect_gradcheck(
      [](const std::vector<Tensor>& in) { return rap::testing::weighted_sum(smooth(in[0], gaussian_kernel(3, 1.0))); },
      {uniform({1, 2, 6, 5}, -2, 2, 9)});
}

TEST(Noise, WithinBudgetAndDeterministic) {
  const Tensor x = uniform({4, 1, 12, 12}, 0, 1, 10);
  const auto b = eps(10.0 / 255);
  const Tensor n1 = gaussian_noise_baseline(x, b, 77);
  const Tensor n2 = gaussian_noise_baseline(x, b, 77);
  const Tensor n3 = gaussian_noise_baseline(x, b, 78);
  expect_in_budget(x, n1, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(n1[i], n2[i]);
  EXPECT_GT(linf_distance(n1, n3), 0.0);
}

TEST(Linf, Basic) {
  EXPECT_DOUBLE_EQ(linf_distance(Tensor::vector({0, 0.5}), Tensor::vector({0.1, 0.2})), 0.3);
  EXPECT_THROW(linf_distance(Tensor::vector({0}), Tensor::vector({0, 1})), ShapeError);
}

}  // namespace
}  // namespace rap::perturb
