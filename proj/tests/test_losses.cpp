#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "vq3d/losses.hpp"
#include "vq3d/ops.hpp"

namespace vq3d {
namespace {

using ag::Var;
using testing::grad_check;
using testing::random_var;

Var<double> constant(Shape s, double v) { return Var<double>(Tensor<double>(std::move(s), v), false); }

TEST(L1, HandCasesAndResummation) {
  Rng rng = make_rng(1);
  auto x = random_var({2, 1, 4, 4, 4}, rng);
  EXPECT_EQ(l1_loss(x, x).item(), 0.0);
  auto shifted = ops::add_scalar(x, 0.5);
  EXPECT_NEAR(l1_loss(x, shifted).item(), 0.5, 1e-12);
  auto y = random_var({2, 1, 4, 4, 4}, rng);
  double s = 0;
  for (int64_t i = 0; i < x.size(); ++i) s += std::abs(x.value()[i] - y.value()[i]);
  EXPECT_NEAR(l1_loss(x, y).item(), s / x.size(), 1e-7);
  EXPECT_THROW(l1_loss(x, random_var({2, 1, 4, 4, 3}, rng)), std::invalid_argument);
}

TEST(FeatureMatching, HandCases) {
  Rng rng = make_rng(2);
  std::vector<Var<double>> a{random_var({1, 2, 2, 2, 2}, rng), random_var({1, 3, 1, 1, 1}, rng)};
  EXPECT_EQ(feature_matching_loss(a, a).item(), 0.0);
  std::vector<Var<double>> one{a[0]}, plus{ops::add_scalar(a[0], 1.0)};
  EXPECT_NEAR(feature_matching_loss(one, plus).item(), 1.0, 1e-12);
  // Layer 1: |diff| = 0.5 everywhere; layer 2: diffs {1, -2, 3} -> mean 2.
  std::vector<Var<double>> real{constant({1, 4}, 0.0), Var<double>(Tensor<double>({3}, {0.0, 0.0, 0.0}))};
  std::vector<Var<double>> fake{constant({1, 4}, -0.5), Var<double>(Tensor<double>({3}, {1.0, -2.0, 3.0}))};
  EXPECT_NEAR(feature_matching_loss(real, fake).item(), (0.5 + 2.0) / 2, 1e-12);
  EXPECT_THROW(feature_matching_loss(real, one), std::invalid_argument);
}

TEST(Gradient3d, AnalyticCases) {
  Rng rng = make_rng(3);
  auto x = random_var({1, 1, 5, 4, 6}, rng);
  EXPECT_EQ(gradient_3d_loss(x, x).item(), 0.0);
  EXPECT_EQ(gradient_3d_loss(constant({1, 1, 4, 4, 4}, 0.3), constant({1, 1, 4, 4, 4}, -0.8)).item(), 0.0);

  // Width ramp on 4^3 against zero, summed by hand: the width axis is
  // in-plane for the coronal (D x W) and sagittal (H x W) planes. Each has
  // 4 slices x 4 rows x 3 forward differences, all equal to 1, so each
  // plane's mean squared gradient difference is 1; the axial plane sees
  // none. Total 2.
  Tensor<double> ramp({1, 1, 4, 4, 4});
  for (int64_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i % 4);
  EXPECT_NEAR(gradient_3d_loss(Var<double>(ramp), constant({1, 1, 4, 4, 4}, 0.0)).item(), 2.0, 1e-12);

  auto y = random_var({1, 1, 5, 4, 6}, rng);
  const double base = gradient_3d_loss(x, y).item();
  EXPECT_NEAR(gradient_3d_loss(ops::add_scalar(x, 0.7), ops::add_scalar(y, 0.7)).item(), base, 1e-12);
}

TEST(Hinge, ScorePatterns) {
  auto s = [](double v) { return constant({1, 1, 2, 2, 2}, v); };
  EXPECT_EQ(hinge_disc_loss(s(1), s(-1)).item(), 0.0);
  EXPECT_EQ(hinge_disc_loss(s(0), s(0)).item(), 2.0);
  EXPECT_EQ(hinge_disc_loss(s(-1), s(1)).item(), 4.0);
}

TEST(GeneratorAdv, WarmupAndValues) {
  LossWeights w;
  w.adv_warmup_steps = 10;
  EXPECT_EQ(generator_adv_loss(constant({4}, 0.0), w, 20).item(), 0.0);
  EXPECT_EQ(generator_adv_loss(constant({4}, 2.0), w, 20).item(), -2.0);
  EXPECT_EQ(generator_adv_loss(constant({4}, 2.0), w, 9).item(), 0.0);
  EXPECT_EQ(generator_adv_loss(constant({4}, 2.0), w, 10).item(), -2.0);
}

TEST(Total, WeightArithmetic) {
  LossWeights w;
  Stage1Components<double> c;
  c.l1 = c.perceptual = c.match = c.gradient = c.codebook = constant({1}, 1.0);
  EXPECT_EQ(total_stage1_loss(c, w).item(), 14.0);
  c.adv = constant({1}, -0.5);
  EXPECT_EQ(total_stage1_loss(c, w).item(), 13.5);
  Stage1Components<double> z;
  z.l1 = z.perceptual = z.match = z.gradient = z.codebook = constant({1}, 0.0);
  EXPECT_EQ(total_stage1_loss(z, w).item(), 0.0);
  c.adv = Var<double>();
  c.l1 = constant({1}, 0.25);
  auto w2 = w;
  w2.l1 *= 2;
  EXPECT_EQ(total_stage1_loss(c, w2).item() - total_stage1_loss(c, w).item(), 4.0 * 0.25);
}

TEST(GradCheck, L1PerceptualGradient) {
  Rng rng = make_rng(4);
  auto x = random_var({2, 1, 6, 6, 6}, rng);
  auto y = random_var({2, 1, 6, 6, 6}, rng);
  PerceptualExtractor<double> f(5);
  auto l1 = grad_check([&] { return l1_loss(x, y); }, {&x, &y});
  EXPECT_LT(l1.rel_error, 1e-3);
  auto perc = grad_check(
      [&] {
        Rng r = make_rng(8);
        return perceptual_loss(x, y, f, r);
      },
      {&x, &y});
  EXPECT_LT(perc.rel_error, 1e-3);
  auto grad = grad_check([&] { return gradient_3d_loss(x, y); }, {&x, &y});
  EXPECT_LT(grad.rel_error, 1e-3);
  std::vector<Var<double>> real{random_var({1, 2, 3, 3, 3}, rng, -1, 1, false)};
  std::vector<Var<double>> fake{random_var({1, 2, 3, 3, 3}, rng)};
  auto fm = grad_check([&] { return feature_matching_loss(real, fake); }, {&fake[0]});
  EXPECT_LT(fm.rel_error, 1e-3);
  auto sr = random_var({1, 1, 2, 2, 2}, rng, -2, 2), sf = random_var({1, 1, 2, 2, 2}, rng, -2, 2);
  auto hinge = grad_check([&] { return hinge_disc_loss(sr, sf); }, {&sr, &sf});
  EXPECT_LT(hinge.rel_error, 1e-3);
}

}  // namespace
}  // namespace vq3d
