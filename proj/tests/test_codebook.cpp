#include <gtest/gtest.h>

#include <cmath>

#include "vq3d/checkpoint.hpp"
#include "vq3d/codebook.hpp"

namespace vq3d {
namespace {

Tensor<float> random_rows(Rng& rng, int64_t n, int64_t d, double lo = -1, double hi = 1) {
  Tensor<float> t({n, d});
  for (auto& v : t.values()) v = static_cast<float>(uniform(rng, lo, hi));
  return t;
}

// Exhaustive nearest neighbour in double with lowest-index ties.
std::vector<int64_t> brute_force(const Tensor<float>& z, const Tensor<float>& e) {
  std::vector<int64_t> out;
  for (int64_t p = 0; p < z.dim(0); ++p) {
    int64_t best = 0;
    double bd = INFINITY;
    for (int64_t k = 0; k < e.dim(0); ++k) {
      double d = 0;
      for (int64_t j = 0; j < z.dim(1); ++j) {
        const double t = static_cast<double>(z[p * z.dim(1) + j]) - e[k * z.dim(1) + j];
        d += t * t;
      }
      if (d < bd) bd = d, best = k;
    }
    out.push_back(best);
  }
  return out;
}

Codebook make_book(int64_t K, int64_t D, double decay = 0.99, int64_t dead_after = 0) {
  CodebookOptions o;
  o.codes = K;
  o.dim = D;
  o.decay = decay;
  o.dead_after = dead_after;
  return Codebook(o, 3);
}

TEST(Quantize, MatchesBruteForce) {
  Rng rng = make_rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t K = 2 + static_cast<int64_t>(uniform_index(rng, 31));
    const int64_t D = 1 + static_cast<int64_t>(uniform_index(rng, 8));
    auto cb = make_book(K, D);
    cb.set_embeddings(random_rows(rng, K, D));
    auto z = random_rows(rng, 16, D);
    ASSERT_EQ(cb.quantize(z), brute_force(z, cb.embeddings())) << "trial " << trial;
  }
}

TEST(Quantize, FixedPointAndTieBreak) {
  Rng rng = make_rng(5);
  auto cb = make_book(10, 4);
  cb.set_embeddings(random_rows(rng, 10, 4));
  Tensor<float> z({6, 4});
  for (int64_t p = 0; p < 6; ++p)
    for (int64_t j = 0; j < 4; ++j) z[p * 4 + j] = cb.embeddings()[7 * 4 + j];
  Tensor<float> zq;
  for (auto i : cb.quantize(z, &zq)) EXPECT_EQ(i, 7);
  EXPECT_EQ(zq, z);

  Tensor<float> e({8, 2}, 10.f);
  e[2 * 2] = 1.f, e[2 * 2 + 1] = 0.f;
  e[5 * 2] = -1.f, e[5 * 2 + 1] = 0.f;
  cb = make_book(8, 2);
  cb.set_embeddings(e);
  Tensor<float> origin({1, 2});
  EXPECT_EQ(cb.quantize(origin)[0], 2);
}

TEST(Quantize, ProjectionAndLookup) {
  Rng rng = make_rng(8);
  auto cb = make_book(16, 3);
  cb.set_embeddings(random_rows(rng, 16, 3));
  auto z = random_rows(rng, 40, 3);
  Tensor<float> zq;
  auto idx = cb.quantize(z, &zq);
  EXPECT_EQ(cb.lookup(idx), zq);
  EXPECT_EQ(cb.quantize(zq), idx);
  auto zero = cb.lookup(std::vector<int64_t>(5, 0));
  for (int64_t p = 0; p < 5; ++p)
    for (int64_t j = 0; j < 3; ++j) EXPECT_EQ(zero[p * 3 + j], cb.embeddings()[j]);
  EXPECT_THROW(cb.lookup({16}), std::out_of_range);
  EXPECT_THROW(cb.lookup({-1}), std::out_of_range);
  EXPECT_THROW(cb.quantize(Tensor<float>({2, 4})), std::invalid_argument);
}

TEST(CodebookLoss, HandCases) {
  Rng rng = make_rng(2);
  auto z = random_rows(rng, 6, 5);
  ag::Var<float> zv(z, true);
  EXPECT_FLOAT_EQ(codebook_loss(zv, z).item(), 0.f);

  Tensor<double> zd({6, 5}), zq({6, 5}), delta({6, 5});
  double mean_sq_norm = 0;
  for (int64_t i = 0; i < zd.size(); ++i) {
    zd[i] = uniform(rng, -1, 1);
    delta[i] = uniform(rng, -0.3, 0.3);
    zq[i] = zd[i] + delta[i];
    mean_sq_norm += delta[i] * delta[i] / 6;
  }
  ag::Var<double> zdv(zd, true);
  auto loss = codebook_loss(zdv, zq);
  EXPECT_NEAR(loss.item(), 1.25 * mean_sq_norm, 1e-12);

  // Only the commitment term is differentiated: d/dz 0.25 mean_pos ||z - zq||^2.
  loss.backward();
  for (int64_t i = 0; i < zd.size(); ++i) EXPECT_NEAR(zdv.grad()[i], 0.5 * (zd[i] - zq[i]) / 6, 1e-12);
}

TEST(CodebookLoss, CommitmentGradientMatchesFiniteDifferences) {
  Rng rng = make_rng(12);
  Tensor<double> z({4, 3}), zq({4, 3});
  for (int64_t i = 0; i < z.size(); ++i) z[i] = uniform(rng, -1, 1), zq[i] = uniform(rng, -1, 1);
  ag::Var<double> zv(z, true);
  codebook_loss(zv, zq).backward();
  auto commitment = [&](const Tensor<double>& x) {
    double s = 0;
    for (int64_t i = 0; i < x.size(); ++i) s += (x[i] - zq[i]) * (x[i] - zq[i]);
    return 0.25 * s / 4;
  };
  const double h = 1e-6;
  double diff2 = 0, n2 = 0;
  for (int64_t i = 0; i < z.size(); ++i) {
    auto p = z, m = z;
    p[i] += h, m[i] -= h;
    const double num = (commitment(p) - commitment(m)) / (2 * h);
    diff2 += (num - zv.grad()[i]) * (num - zv.grad()[i]);
    n2 += num * num;
  }
  EXPECT_LT(std::sqrt(diff2 / n2), 1e-6);
}

TEST(EmaUpdate, ZeroDecayGivesSmoothedClusterMeans) {
  Rng rng = make_rng(21);
  const int64_t K = 4, D = 3, n = 10;
  auto cb = make_book(K, D, 0.0);
  cb.set_embeddings(random_rows(rng, K, D));
  auto z = random_rows(rng, n, D);
  std::vector<int64_t> a = {0, 0, 1, 1, 1, 3, 3, 3, 3, 0};
  cb.ema_update(z.data(), n, a);
  const double eps = 1e-5;
  for (int64_t k = 0; k < K; ++k) {
    double cnt = 0;
    std::vector<double> s(D, 0);
    for (int64_t p = 0; p < n; ++p)
      if (a[p] == k) {
        cnt += 1;
        for (int64_t j = 0; j < D; ++j) s[j] += z[p * D + j];
      }
    const double smoothed = (cnt + eps) / (n + K * eps) * n;
    for (int64_t j = 0; j < D; ++j) EXPECT_NEAR(cb.embeddings()[k * D + j], s[j] / smoothed, 1e-6) << k;
  }
  // Code 2 was never assigned: its sum and mass are both zero.
  EXPECT_EQ(cb.embeddings()[2 * D], 0.f);
}

TEST(EmaUpdate, TwoStepRecurrenceAndIdleDrift) {
  Rng rng = make_rng(22);
  const int64_t K = 3, D = 2, n = 4;
  const double g = 0.9, eps = 1e-5;
  auto cb = make_book(K, D, g);
  auto e0 = random_rows(rng, K, D);
  cb.set_embeddings(e0);
  auto z = random_rows(rng, n, D);
  std::vector<int64_t> a = {0, 1, 1, 0};
  cb.ema_update(z.data(), n, a);
  cb.ema_update(z.data(), n, a);

  // Closed form of two identical steps from N = 1, m = e0.
  double N[3], M[3][2];
  for (int k = 0; k < K; ++k) {
    double cnt = 0, s[2] = {0, 0};
    for (int p = 0; p < n; ++p)
      if (a[p] == k) cnt += 1, s[0] += z[p * D], s[1] += z[p * D + 1];
    N[k] = g * g * 1 + (1 - g) * cnt * (1 + g);
    for (int j = 0; j < D; ++j) M[k][j] = g * g * e0[k * D + j] + (1 - g) * s[j] * (1 + g);
  }
  const double tot = N[0] + N[1] + N[2];
  for (int k = 0; k < K; ++k) {
    const double sm = (N[k] + eps) / (tot + K * eps) * tot;
    for (int j = 0; j < D; ++j) EXPECT_NEAR(cb.embeddings()[k * D + j], M[k][j] / sm, 1e-6);
    EXPECT_NEAR(cb.cluster_size()[k], N[k], 1e-6);
  }
  // Idle code 2: N = g^2, m = g^2 e0, so it stays at e0 up to the smoothing factor.
  const double sm2 = (g * g + eps) / (tot + K * eps) * tot;
  EXPECT_NEAR(cb.embeddings()[2 * D], g * g * e0[2 * D] / sm2, 1e-6);
}

TEST(EmaUpdate, UnitDecayPreservesMass) {
  Rng rng = make_rng(23);
  auto cb = make_book(5, 2, 1.0);
  cb.set_embeddings(random_rows(rng, 5, 2));
  auto z = random_rows(rng, 7, 2);
  cb.ema_update(z.data(), 7, cb.quantize(z));
  double total = 0;
  for (int k = 0; k < 5; ++k) total += cb.cluster_size()[k];
  EXPECT_EQ(total, 5.0);
}

TEST(EmaUpdate, DeadCodesAreRevivedFromBatch) {
  Rng rng = make_rng(24);
  auto cb = make_book(4, 2, 0.99, 3);
  Tensor<float> e({4, 2});
  e[0] = 0, e[1] = 0;
  for (int k = 1; k < 4; ++k) e[2 * k] = 100.f + k, e[2 * k + 1] = 100.f;
  cb.set_embeddings(e);
  auto z = random_rows(rng, 6, 2, -0.1, 0.1);
  for (int step = 0; step < 3; ++step) cb.ema_update(z.data(), 6, cb.quantize(z));
  // After three idle updates codes 1..3 are re-seeded onto batch rows.
  for (int k = 1; k < 4; ++k) {
    bool found = false;
    for (int p = 0; p < 6; ++p)
      found |= std::abs(cb.embeddings()[2 * k] - z[2 * p]) < 1e-3 && std::abs(cb.embeddings()[2 * k + 1] - z[2 * p + 1]) < 1e-3;
    EXPECT_TRUE(found) << k;
  }
}

TEST(Usage, CountsAndPerplexity) {
  std::vector<int64_t> uniform_use;
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 16; ++k) uniform_use.push_back(k);
  EXPECT_NEAR(usage_stats(uniform_use, 16).perplexity, 16.0, 1e-9);
  EXPECT_NEAR(usage_stats(std::vector<int64_t>(9, 4), 16).perplexity, 1.0, 1e-12);
  // 2x2x2 grid tallied by hand: code 1 x3, code 0 x2, code 5 x2, code 7 x1.
  auto s = usage_stats({1, 0, 5, 1, 7, 5, 0, 1}, 8);
  EXPECT_EQ(s.counts, (std::vector<int64_t>{2, 3, 0, 0, 0, 2, 0, 1}));
  int64_t total = 0;
  for (auto c : s.counts) total += c;
  EXPECT_EQ(total, 8);
}

TEST(CodebookState, CheckpointRoundTrip) {
  Rng rng = make_rng(25);
  auto cb = make_book(6, 3, 0.95, 2);
  auto z = random_rows(rng, 20, 3);
  cb.init_from(z.data(), 20, 9);
  cb.ema_update(z.data(), 20, cb.quantize(z));
  Checkpoint ck;
  cb.save(ck, "codebook.");
  auto path = std::filesystem::temp_directory_path() / "vq3d_codebook.ck";
  ck.save(path);
  Codebook back;
  back.load(Checkpoint::load(path), "codebook.");
  EXPECT_EQ(back.embeddings(), cb.embeddings());
  EXPECT_EQ(back.cluster_size(), cb.cluster_size());
  EXPECT_EQ(back.embed_sum(), cb.embed_sum());
  EXPECT_EQ(back.updates(), 1);
  // Identical continuation after reload.
  cb.ema_update(z.data(), 20, cb.quantize(z));
  back.ema_update(z.data(), 20, back.quantize(z));
  EXPECT_EQ(back.embeddings(), cb.embeddings());
}

}  // namespace
}  // namespace vq3d
