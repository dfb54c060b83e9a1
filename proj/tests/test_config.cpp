#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vq3d/config.hpp"

namespace vq3d {
namespace {

TEST(Config, DefaultsMatchSchedule) {
  RunConfig c;
  EXPECT_EQ(c.stage1.epochs, 4000);
  EXPECT_DOUBLE_EQ(c.stage1.lr, 1e-4);
  EXPECT_EQ(c.stage1.batch, 3);
  EXPECT_EQ(c.stage2.epochs, 1500);
  EXPECT_DOUBLE_EQ(c.stage2.lr, 4.5e-6);
  EXPECT_EQ(c.codebook.codes, 512);
  EXPECT_DOUBLE_EQ(c.loss.l1, 4);
  EXPECT_DOUBLE_EQ(c.loss.gradient, 4);
  EXPECT_NO_THROW(c.validate());
  EXPECT_NO_THROW(RunConfig::toy().validate());
  EXPECT_EQ(c.transformer().seq_len, 64);
  EXPECT_EQ(c.codebook_options().dim, c.net.n_z);
}

TEST(Config, ParseTypesAndComments) {
  auto c = RunConfig::parse(
      "# toy\n"
      "net.in_edge = 32   # trailing comment\n"
      "net.norm=false\n"
      "\n"
      "stage2.mask_ratio = 0.15\n"
      "seed = 18446744073709551615\n"
      "eval.mmd_kernel = rbf\n");
  EXPECT_EQ(c.net.in_edge, 32);
  EXPECT_FALSE(c.net.norm);
  EXPECT_DOUBLE_EQ(c.stage2.mask_ratio, 0.15);
  EXPECT_EQ(c.seed, UINT64_MAX);
  EXPECT_EQ(c.eval.mmd_kernel, "rbf");
  EXPECT_EQ(c.stage1.epochs, 4000);
}

TEST(Config, Errors) {
  try {
    RunConfig::parse("net.in_edge = 32\nstage1.epoch = 5\n", RunConfig{}, "run.cfg");
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("unknown key 'stage1.epoch'"), std::string::npos) << m;
    EXPECT_NE(m.find("run.cfg:2"), std::string::npos) << m;
  }
  EXPECT_THROW(RunConfig::parse("net.in_edge = 3x2"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("net.norm = maybe"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("stage1.lr"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("seed = -1"), std::invalid_argument);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg"), std::runtime_error);
  auto c = RunConfig::parse("stage2.mask_ratio = 1.5");
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig::parse("net.latent_edge = 2");
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, EchoRoundTrip) {
  auto c = RunConfig::toy();
  c.seed = 12345;
  c.stage2.lr = 4.5e-6;
  c.net.leaky_slope = 0.1 + 0.2;  // not exactly representable
  c.eval.mmd_kernel = "rbf";
  const auto text = c.echo();
  auto back = RunConfig::parse(text);
  EXPECT_EQ(back.echo(), text);
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.net.leaky_slope, c.net.leaky_slope);
  EXPECT_EQ(static_cast<size_t>(std::count(text.begin(), text.end(), '\n')), RunConfig::keys().size());

  const auto path = std::filesystem::temp_directory_path() / "vq3d_cfg_test.cfg";
  std::ofstream(path) << text;
  EXPECT_TRUE(RunConfig::load(path) == c);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace vq3d
