#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "vq3d/losses.hpp"
#include "vq3d/ops.hpp"
#include "vq3d/vqgan.hpp"

namespace vq3d {
namespace {

using ag::Var;
using testing::grad_check;
using testing::random_var;

NetworkConfig tiny(int64_t in_edge, int64_t latent, bool norm = false) {
  NetworkConfig c;
  c.in_edge = in_edge;
  c.latent_edge = latent;
  c.base_channels = 2;
  c.max_channels = 4;
  c.n_z = 3;
  c.norm = norm;
  return c;
}

TEST(NetworkConfig, Validation) {
  EXPECT_NO_THROW(tiny(32, 4).validate());
  EXPECT_NO_THROW(tiny(128, 8).validate());
  EXPECT_THROW(tiny(32, 2).validate(), std::invalid_argument);
  EXPECT_THROW(tiny(48, 4).validate(), std::invalid_argument);
  EXPECT_THROW(tiny(256, 4).validate(), std::invalid_argument);
  EXPECT_EQ(tiny(128, 4).downsamplings(), 5);
  EXPECT_EQ(tiny(128, 8).downsamplings(), 4);
  EXPECT_EQ(tiny(32, 4).downsamplings(), 3);
}

struct ShapeCase {
  int64_t in, lat;
};

class EncoderDecoderShapes : public ::testing::TestWithParam<ShapeCase> {};

TEST_P(EncoderDecoderShapes, RoundTripShape) {
  const auto p = GetParam();
  auto cfg = tiny(p.in, p.lat, true);
  Rng rng = make_rng(1);
  Encoder<float> enc(cfg, rng);
  Decoder<float> dec(cfg, rng);
  ag::NoGradGuard ng;
  auto x = Var<float>(Tensor<float>({1, 1, p.in, p.in, p.in}, 0.1f));
  auto z = enc.forward(x);
  EXPECT_EQ(z.shape(), (Shape{1, cfg.n_z, p.lat, p.lat, p.lat}));
  auto y = dec.forward(z);
  EXPECT_EQ(y.shape(), x.shape());
}

INSTANTIATE_TEST_SUITE_P(Configs, EncoderDecoderShapes,
                         ::testing::Values(ShapeCase{32, 4}, ShapeCase{32, 8}, ShapeCase{64, 4}, ShapeCase{64, 8},
                                           ShapeCase{128, 4}, ShapeCase{128, 8}));

TEST(Decoder, OutputBoundedAndDeterministic) {
  auto cfg = tiny(32, 4, true);
  Rng rng = make_rng(2);
  Decoder<float> dec(cfg, rng);
  dec.eval();
  Rng zr = make_rng(3);
  Tensor<float> z({2, 3, 4, 4, 4});
  for (auto& v : z.values()) v = static_cast<float>(uniform(zr, -50, 50));
  ag::NoGradGuard ng;
  auto a = dec.forward(Var<float>(z));
  auto b = dec.forward(Var<float>(z));
  EXPECT_EQ(a.value(), b.value());
  for (float v : a.value().values()) ASSERT_LE(std::abs(v), 1.f);
  EXPECT_THROW(dec.forward(Var<float>(Tensor<float>({1, 3, 8, 8, 8}))), std::invalid_argument);
}

TEST(Encoder, RejectsWrongInputShape) {
  auto cfg = tiny(32, 4);
  Rng rng = make_rng(2);
  Encoder<float> enc(cfg, rng);
  EXPECT_THROW(enc.forward(Var<float>(Tensor<float>({1, 1, 16, 16, 16}))), std::invalid_argument);
}

TEST(Init, SeedDeterminesParameters) {
  auto cfg = tiny(32, 4, true);
  Rng r1 = make_rng(9), r2 = make_rng(9), r3 = make_rng(10);
  Encoder<float> a(cfg, r1), b(cfg, r2), c(cfg, r3);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].var->value(), pb[i].var->value());
    any_diff |= !(pa[i].var->value() == pc[i].var->value());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Discriminator, ScoreMapAndTaps) {
  for (int64_t e : {32, 128}) {
    auto cfg = tiny(e, 4);
    Rng rng = make_rng(4);
    Discriminator<float> dis(cfg, rng);
    ag::NoGradGuard ng;
    Rng xr = make_rng(5);
    Tensor<float> x({1, 1, e, e, e});
    for (auto& v : x.values()) v = static_cast<float>(uniform(xr, -1, 1));
    auto o1 = dis.forward(Var<float>(x));
    auto o2 = dis.forward(Var<float>(x));
    EXPECT_EQ(o1.scores.shape(), (Shape{1, 1, e / 32, e / 32, e / 32}));
    EXPECT_EQ(o1.taps.size(), 4u);
    EXPECT_EQ(o1.scores.value(), o2.scores.value());
  }
}

TEST(Perceptual, IdenticalZeroDistinctPositive) {
  PerceptualExtractor<double> f(7);
  Rng rng = make_rng(6);
  auto x = random_var({2, 1, 8, 8, 8}, rng, -1, 1, false);
  auto y = random_var({2, 1, 8, 8, 8}, rng, -1, 1, false);
  for (uint64_t seed : {1, 2, 3}) {
    Rng r = make_rng(seed);
    EXPECT_EQ(perceptual_loss(x, x, f, r).item(), 0.0);
  }
  Rng r1 = make_rng(11), r2 = make_rng(11);
  const double a = perceptual_loss(x, y, f, r1).item();
  EXPECT_GT(a, 0.0);
  EXPECT_EQ(a, perceptual_loss(x, y, f, r2).item());
  auto taps = f.forward(ops::extract_slices(x, ops::Plane::axial, {{0}, {1}}, 3));
  ASSERT_EQ(taps.size(), 3u);
  for (auto& t : taps)
    for (double v : t.value().values()) ASSERT_TRUE(std::isfinite(v));
}

// Finite-difference check through encoder and decoder on a 32^3 toy input.
TEST(GradCheck, EncoderDecoderParameters) {
  auto cfg = tiny(32, 4, true);
  Rng rng = make_rng(12);
  Encoder<double> enc(cfg, rng);
  Decoder<double> dec(cfg, rng);
  auto x = random_var({2, 1, 32, 32, 32}, rng, -1, 1, false);
  auto target = random_var({2, 1, 32, 32, 32}, rng, -1, 1, false);
  auto f = [&]() {
    auto z = enc.forward(x);
    return ops::mean_sq_diff(dec.forward(z), target);
  };
  std::vector<Var<double>*> probe;
  for (auto& p : enc.parameters())
    if (p.name == "conv0.weight" || p.name == "res3.conv2.weight" || p.name == "norm2.gamma") probe.push_back(p.var);
  for (auto& p : dec.parameters())
    if (p.name == "conv0.weight" || p.name == "conv4.bias" || p.name == "res1.conv1.weight") probe.push_back(p.var);
  ASSERT_EQ(probe.size(), 6u);
  auto r = grad_check(f, probe, 1e-6, 12);
  EXPECT_LT(r.rel_error, 1e-3) << "analytic " << r.analytic_norm << " numeric " << r.numeric_norm;
}

TEST(GradCheck, DiscriminatorAndPerceptualInput) {
  auto cfg = tiny(32, 4);
  Rng rng = make_rng(13);
  Discriminator<double> dis(cfg, rng);
  PerceptualExtractor<double> f(3);
  auto x = random_var({1, 1, 32, 32, 32}, rng, -1, 1, true);
  auto ref = random_var({1, 1, 32, 32, 32}, rng, -1, 1, false);
  auto fn = [&]() {
    auto o = dis.forward(x);
    Rng r = make_rng(4);
    return ops::add(ops::mean(o.scores), perceptual_loss(x, ref, f, r));
  };
  std::vector<Var<double>*> probe{&x};
  for (auto& p : dis.parameters())
    if (p.name == "conv1.weight" || p.name == "conv4.bias") probe.push_back(p.var);
  auto r = grad_check(fn, probe, 1e-6, 20);
  EXPECT_LT(r.rel_error, 1e-3);
}

}  // namespace
}  // namespace vq3d
