#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "vq3d/nn/optim.hpp"
#include "vq3d/ops.hpp"
#include "vq3d/transformer.hpp"

namespace vq3d {
namespace {

using ag::Var;
using testing::grad_check;
using testing::random_var;

TransformerConfig small(int64_t codes, int64_t seq_len, int64_t dim = 16, int64_t layers = 2) {
  TransformerConfig c;
  c.layers = layers;
  c.heads = 2;
  c.model_dim = dim;
  c.codes = codes;
  c.seq_len = seq_len;
  return c;
}

TEST(Linearize, RasterOrderAndRoundTrip) {
  TokenGrid g{2, 2, 2, {}};
  g.idx.resize(8);
  // Fill by coordinates so the expected order is independent of storage.
  for (int64_t z = 0; z < 2; ++z)
    for (int64_t y = 0; y < 2; ++y)
      for (int64_t x = 0; x < 2; ++x) g.idx[z * 4 + y * 2 + x] = z * 4 + y * 2 + x;
  auto s = linearize(g);
  std::vector<int64_t> want(8);
  std::iota(want.begin(), want.end(), 0);
  EXPECT_EQ(s, want);
  EXPECT_EQ(delinearize(s, 2, 2, 2), g);

  Rng rng = make_rng(3);
  TokenGrid r{4, 3, 5, {}};
  for (int i = 0; i < 60; ++i) r.idx.push_back(static_cast<int64_t>(uniform_index(rng, 512)));
  EXPECT_EQ(delinearize(linearize(r), 4, 3, 5), r);

  EXPECT_THROW(delinearize(std::vector<int64_t>(7), 2, 2, 2), std::invalid_argument);
  TokenGrid bad{2, 2, 2, std::vector<int64_t>(7)};
  EXPECT_THROW(linearize(bad), std::invalid_argument);
}

TEST(Mask, CountsAndContracts) {
  EXPECT_EQ(mask_count(0.5, 64), 32);
  EXPECT_EQ(mask_count(0.5, 7), 4);
  EXPECT_EQ(mask_count(0.25, 2), 1);
  EXPECT_EQ(mask_count(0.0, 64), 0);
  EXPECT_EQ(mask_count(1.0, 8), 8);

  std::vector<int64_t> seq(8);
  std::iota(seq.begin(), seq.end(), 0);
  auto [z, mz] = apply_mask(seq, 0.0, 5, 512);
  EXPECT_EQ(z, seq);
  EXPECT_EQ(mz.masked_count(), 0);
  auto [o, mo] = apply_mask(seq, 1.0, 5, 512);
  EXPECT_EQ(mo.masked_count(), 8);
  for (int i = 0; i < 8; ++i) EXPECT_NE(o[i], seq[i]);

  Rng rng = make_rng(8);
  std::vector<int64_t> s64;
  for (int i = 0; i < 64; ++i) s64.push_back(static_cast<int64_t>(uniform_index(rng, 512)));
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto [c, m] = apply_mask(s64, 0.5, seed, 512);
    ASSERT_EQ(m.masked_count(), 32);
    int same = 0;
    for (int i = 0; i < 64; ++i) {
      same += c[i] == s64[i];
      ASSERT_GE(c[i], 0);
      ASSERT_LT(c[i], 512);
      if (m.keep[i]) ASSERT_EQ(c[i], s64[i]);
    }
    ASSERT_EQ(same, 32);
    auto again = apply_mask(s64, 0.5, seed, 512);
    ASSERT_EQ(again.first, c);
    ASSERT_EQ(again.second.keep, m.keep);
  }
  EXPECT_THROW(apply_mask(s64, 1.5, 0, 512), std::invalid_argument);
  EXPECT_THROW(apply_mask(s64, -0.1, 0, 512), std::invalid_argument);
}

TEST(Transformer, ConfigValidation) {
  EXPECT_NO_THROW(TransformerConfig{}.validate());
  auto c = small(8, 8);
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small(8, 8);
  c.layers = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// Changing tokens at or after position i must leave the logits for
// position i untouched: they condition on c_0..c_{i-1} only.
TEST(Transformer, CausalityOnTwoCubedGrid) {
  Rng rng = make_rng(11);
  MaskedTransformer<float> model(small(16, 8), rng);
  ag::NoGradGuard ng;
  std::vector<int64_t> base{3, 1, 4, 1, 5, 9, 2, 6};
  auto ref = model.forward_logits({base});
  ASSERT_EQ(ref.shape(), (Shape{8, 16}));
  Rng pr = make_rng(12);
  for (int64_t i = 0; i < 8; ++i) {
    for (int trial = 0; trial < 3; ++trial) {
      auto alt = base;
      for (int64_t j = i; j < 8; ++j) alt[j] = static_cast<int64_t>(uniform_index(pr, 16));
      auto out = model.forward_logits({alt});
      for (int64_t p = 0; p <= i; ++p)
        for (int64_t k = 0; k < 16; ++k)
          ASSERT_NEAR(out.value()[p * 16 + k], ref.value()[p * 16 + k], 1e-6) << "pos " << p << " cut " << i;
    }
    // And the prefix does influence position i + 1.
    if (i + 1 < 8) {
      auto alt = base;
      alt[i] = (alt[i] + 1) % 16;
      auto out = model.forward_logits({alt});
      float diff = 0;
      for (int64_t k = 0; k < 16; ++k) diff += std::abs(out.value()[(i + 1) * 16 + k] - ref.value()[(i + 1) * 16 + k]);
      EXPECT_GT(diff, 0.f);
    }
  }
  // Batched rows match single-sequence rows.
  std::vector<int64_t> other{0, 0, 7, 7, 1, 2, 3, 4};
  auto both = model.forward_logits({base, other});
  for (int64_t k = 0; k < 8 * 16; ++k) ASSERT_NEAR(both.value()[k], ref.value()[k], 1e-5);
  EXPECT_THROW(model.forward_logits({std::vector<int64_t>(9)}), std::invalid_argument);
  EXPECT_THROW(model.forward_logits({base, std::vector<int64_t>(7)}), std::invalid_argument);
}

TEST(MaskedCe, AnalyticValues) {
  const int64_t K = 512, S = 6;
  Var<double> uniform_logits(Tensor<double>({S, K}, 0.25));
  std::vector<int64_t> tgt{0, 5, 511, 7, 100, 3};
  std::vector<uint8_t> keep{0, 1, 0, 0, 1, 1};
  EXPECT_NEAR(masked_ce_loss(uniform_logits, tgt, keep).item(), std::log(512.0), 1e-12);
  std::vector<uint8_t> none(S, 1);
  EXPECT_EQ(masked_ce_loss(uniform_logits, tgt, none).item(), 0.0);

  // Three tokens, K = 3, by hand: rows 0 and 2 are masked.
  Tensor<double> l({3, 3}, {2.0, 0.0, 0.0, 9.0, 9.0, 9.0, 0.0, 1.0, 3.0});
  std::vector<int64_t> t3{0, 1, 1};
  std::vector<uint8_t> k3{0, 1, 0};
  const double r0 = -(2.0 - std::log(std::exp(2.0) + 2.0));
  const double r2 = -(1.0 - std::log(1.0 + std::exp(1.0) + std::exp(3.0)));
  EXPECT_NEAR(masked_ce_loss(Var<double>(l), t3, k3).item(), (r0 + r2) / 2, 1e-12);

  // Unmasked rows do not matter.
  Tensor<double> l2 = l;
  for (int k = 3; k < 6; ++k) l2[k] = -40.0 + k;
  EXPECT_EQ(masked_ce_loss(Var<double>(l2), t3, k3).item(), masked_ce_loss(Var<double>(l), t3, k3).item());
  EXPECT_THROW(masked_ce_loss(Var<double>(l), t3, std::vector<uint8_t>{0, 1}), std::invalid_argument);
}

TEST(MaskedCe, GradCheckThroughModel) {
  Rng rng = make_rng(21);
  auto logits = random_var({5, 7}, rng, -2, 2);
  std::vector<int64_t> t{1, 6, 0, 3, 3};
  std::vector<uint8_t> k{0, 0, 1, 0, 1};
  auto r = grad_check([&] { return masked_ce_loss(logits, t, k); }, {&logits});
  EXPECT_LT(r.rel_error, 1e-3);

  MaskedTransformer<double> model(small(6, 8, 8, 1), rng);
  std::vector<std::vector<int64_t>> seqs{{1, 2, 3, 4, 5, 0, 1, 2}, {5, 5, 4, 4, 3, 3, 2, 2}};
  std::vector<int64_t> targets;
  for (auto& s : seqs) targets.insert(targets.end(), s.begin(), s.end());
  auto corrupted = seqs;
  std::vector<uint8_t> keep;
  for (size_t b = 0; b < seqs.size(); ++b) {
    auto [c, m] = apply_mask(seqs[b], 0.5, b, 6);
    corrupted[b] = c;
    keep.insert(keep.end(), m.keep.begin(), m.keep.end());
  }
  std::vector<Var<double>*> probe;
  auto params = model.parameters();
  for (auto& p : params)
    if (p.name == "tok_emb.table" || p.name == "block0.qkv.weight" || p.name == "block0.fc2.weight" ||
        p.name == "head.bias" || p.name == "ln_f.gamma")
      probe.push_back(p.var);
  ASSERT_EQ(probe.size(), 5u);
  auto rm = grad_check([&] { return masked_ce_loss(model.forward_logits(corrupted), targets, keep); }, probe, 1e-6, 15);
  EXPECT_LT(rm.rel_error, 1e-3);
}

TEST(Sampling, TopKAndTemperature) {
  std::vector<float> logits{0.f, 5.f, 1.f, 5.f, -3.f};
  SamplingOptions greedy{0.0, 100};
  Rng rng = make_rng(1);
  EXPECT_EQ(sample_from_logits(logits.data(), 5, greedy, rng), 1);
  SamplingOptions top1{1.0, 1};
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_from_logits(logits.data(), 5, top1, rng), 1);
  SamplingOptions top2{1.0, 2};
  int ones = 0;
  for (int i = 0; i < 2000; ++i) {
    int64_t s = sample_from_logits(logits.data(), 5, top2, rng);
    ASSERT_TRUE(s == 1 || s == 3);
    ones += s == 1;
  }
  EXPECT_NEAR(ones / 2000.0, 0.5, 0.05);
  // Full softmax frequencies at temperature 2.
  SamplingOptions all{2.0, 0};
  std::vector<int> hist(5);
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++hist[sample_from_logits(logits.data(), 5, all, rng)];
  double z = 0;
  for (float v : logits) z += std::exp(v / 2.0);
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(hist[k] / double(n), std::exp(logits[k] / 2.0) / z, 0.015);
}

TEST(Sampling, ValidAndSeedDeterministic) {
  Rng rng = make_rng(31);
  MaskedTransformer<float> model(small(32, 8), rng);
  SamplingOptions opts;
  auto a = sample_tokens(model, 2, 7, opts);
  auto b = sample_tokens(model, 2, 7, opts);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 8);
  for (int64_t v : a.idx) {
    EXPECT_GE(v, 0);
    EXPECT_LT(v, 32);
  }
  bool differs = false;
  for (uint64_t s = 8; s < 16 && !differs; ++s) differs = !(sample_tokens(model, 2, s, opts) == a);
  EXPECT_TRUE(differs);
  EXPECT_THROW(sample_tokens(model, 3, 7, opts), std::invalid_argument);
}

// A model trained on the sequences c_i = (c_0 + 3i) mod 8 must reproduce
// them under greedy decoding from any uniform first token.
TEST(Sampling, GreedyRolloutOnMemorizedFamily) {
  const int64_t K = 8, S = 8;
  Rng rng = make_rng(41);
  MaskedTransformer<float> model(small(K, S, 32, 2), rng);
  std::vector<std::vector<int64_t>> data;
  std::vector<int64_t> targets;
  for (int64_t s0 = 0; s0 < K; ++s0) {
    std::vector<int64_t> s;
    for (int64_t i = 0; i < S; ++i) s.push_back((s0 + 3 * i) % K);
    targets.insert(targets.end(), s.begin(), s.end());
    data.push_back(std::move(s));
  }
  std::vector<uint8_t> keep(targets.size(), 0);
  for (size_t b = 0; b < data.size(); ++b) keep[b * S] = 1;  // the first token is not modeled
  nn::Adam<float> opt(model.parameters(), {.lr = 3e-3});
  double loss = 0;
  for (int step = 0; step < 300; ++step) {
    opt.zero_grad();
    auto l = masked_ce_loss(model.forward_logits(data), targets, keep);
    loss = l.item();
    l.backward();
    opt.step();
  }
  EXPECT_LT(loss, 0.05);
  SamplingOptions greedy{0.0, 100};
  for (uint64_t seed = 0; seed < 12; ++seed) {
    auto seq = sample_sequence(model, seed, greedy);
    ASSERT_EQ(seq.size(), static_cast<size_t>(S));
    for (int64_t i = 1; i < S; ++i) ASSERT_EQ(seq[i], (seq[0] + 3 * i) % K) << "seed " << seed;
  }
}

}  // namespace
}  // namespace vq3d
