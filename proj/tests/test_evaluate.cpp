#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "vq3d/evaluate.hpp"

namespace vq3d {
namespace {

TEST(Aggregate, HandComputedMeanAndSd) {
  const std::string log =
      "{\"metric\":\"psnr\",\"value\":20.0,\"seed\":1}\n"
      "{\"metric\":\"fid\",\"value\":3.5}\n"
      "\n"
      "{\"metric\":\"psnr\",\"value\":22.0,\"seed\":2}\n"
      "{\"metric\":\"psnr\",\"value\":27.0,\"seed\":3}\n";
  auto rows = aggregate_metrics(log);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].metric, "psnr");
  EXPECT_EQ(rows[0].count, 3);
  EXPECT_NEAR(rows[0].mean, 23.0, 1e-12);
  // deviations -3, -1, 4 -> (9 + 1 + 16) / 3
  EXPECT_NEAR(rows[0].sd, std::sqrt(26.0 / 3), 1e-12);
  EXPECT_EQ(rows[1].count, 1);
  EXPECT_EQ(rows[1].sd, 0.0);
  const auto t = aggregate_table(rows);
  EXPECT_NE(t.find("psnr"), std::string::npos);
  EXPECT_NE(t.find("23 +/- 2.94392"), std::string::npos) << t;

  try {
    aggregate_metrics("{\"metric\":\"a\",\"value\":1}\n{oops\n");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(aggregate_metrics("{\"metric\":\"a\"}\n"), std::runtime_error);
}

TEST(Evaluate, GenerationSuite) {
  auto cfg = RunConfig::toy();
  cfg.eval.mmd_tests = 3;
  cfg.eval.msssim_pairs = 3;
  std::vector<Volume> real, gen;
  for (int i = 0; i < 4; ++i) {
    real.push_back(make_synthetic_roi(10 + i, 32, 1 + i % 2));
    gen.push_back(make_synthetic_roi(20 + i, 32, 1 + i % 2));
  }
  auto rep = evaluate_generation(real, gen, cfg);
  std::set<std::string> names;
  for (const auto& r : rep.records) {
    names.insert(r.name);
    EXPECT_TRUE(std::isfinite(r.value)) << r.name;
  }
  for (auto n : {"mmd2", "ms_ssim_generated", "ms_ssim_real", "fid_axial", "fid_coronal", "fid_sagittal",
                 "nearest_real_ssim3d"})
    EXPECT_TRUE(names.count(n)) << n;
  EXPECT_EQ(rep.jsonl(), evaluate_generation(real, gen, cfg).jsonl());

  auto self = evaluate_generation(real, real, cfg);
  for (const auto& r : self.records) {
    if (r.name == "mmd2") EXPECT_LE(std::abs(r.value), 1e-6);
    if (r.name == "nearest_real_ssim3d") EXPECT_NEAR(r.value, 1.0, 1e-9);
  }
  EXPECT_THROW(evaluate_generation(real, {gen[0]}, cfg), std::invalid_argument);
}

TEST(Preprocess, SyntheticCaseRoundTrip) {
  auto c = make_synthetic_case(5, 32, 2);
  EXPECT_EQ(c.brain.d, 48);
  int64_t n = 0;
  for (auto m : c.mask.data) n += m;
  EXPECT_GT(n, 0);
  auto roi = preprocess_case(c.brain, c.mask, 32);
  EXPECT_EQ(roi.d, 32);
  float lo = 1, hi = -1;
  for (float v : roi.data) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_EQ(lo, -1.f);
  EXPECT_EQ(hi, 1.f);
  EXPECT_EQ(make_synthetic_case(5, 32, 2).brain, c.brain);
}

}  // namespace
}  // namespace vq3d
