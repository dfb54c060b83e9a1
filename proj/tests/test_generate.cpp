#include <gtest/gtest.h>

#include <filesystem>

#include "vq3d/fileio.hpp"
#include "vq3d/generate.hpp"

namespace vq3d {
namespace {

namespace fs = std::filesystem;

RunConfig tiny(uint64_t seed) {
  auto c = RunConfig::toy();
  c.net.latent_edge = 4;
  c.net.base_channels = 2;
  c.net.max_channels = 4;
  c.net.n_z = 3;
  c.codebook.codes = 16;
  c.stage1.epochs = 3;
  c.stage1.batch = 2;
  c.tf_layers = 1;
  c.tf_heads = 2;
  c.tf_model_dim = 16;
  c.stage2.epochs = 3;
  c.stage2.batch = 2;
  c.seed = seed;
  return c;
}

class GenerateTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "vq3d_generate_test";
    fs::remove_all(root_);
    std::vector<Volume> data;
    for (int i = 0; i < 4; ++i) data.push_back(make_synthetic_roi(300 + i, 32, 1 + i % 2));
    TrainOptions o;
    o.quiet = true;
    for (uint64_t s : {1, 2}) {
      o.out_dir = root_ / ("run" + std::to_string(s));
      train_stage1(tiny(s), data, o);
      train_stage2(tiny(s), o.out_dir / "stage1.ckpt", data, o);
    }
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static fs::path root_;
};

fs::path GenerateTest::root_;

TEST_F(GenerateTest, VolumeShapeRangeAndDeterminism) {
  auto g = load_generator(root_ / "run1/stage1.ckpt", root_ / "run1/stage2.ckpt");
  SamplingOptions opts;
  auto a = generate_volume(g, 5, opts);
  auto b = generate_volume(g, 5, opts);
  EXPECT_EQ(a.d, 32);
  EXPECT_EQ(a.h, 32);
  EXPECT_EQ(a.w, 32);
  EXPECT_EQ(a, b);
  for (float v : a.data) ASSERT_LE(std::abs(v), 1.f);
}

TEST_F(GenerateTest, BatchFilesManifestAndOverlap) {
  auto g = load_generator(root_ / "run1/stage1.ckpt", root_ / "run1/stage2.ckpt");
  SamplingOptions opts;
  auto b1 = generate_batch(g, 3, 10, opts, root_ / "gen1");
  ASSERT_EQ(b1.files.size(), 3u);
  for (auto& f : b1.files) EXPECT_TRUE(fs::exists(f));
  auto m = read_manifest(b1.manifest);
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].path, "gen_10.vq3d");
  EXPECT_EQ(read_volume(m.resolve(m.entries[2])), b1.volumes[2]);
  EXPECT_NE(read_file(b1.files[0]), read_file(b1.files[1]));

  auto b2 = generate_batch(g, 3, 11, opts, root_ / "gen2", "nii.gz");
  EXPECT_EQ(b2.volumes[0], b1.volumes[1]);
  EXPECT_EQ(b2.volumes[1], b1.volumes[2]);
  EXPECT_EQ(b2.files[0].filename(), "gen_11.nii.gz");
  EXPECT_THROW(generate_batch(g, 0, 1, opts, root_ / "gen3"), std::invalid_argument);
}

TEST_F(GenerateTest, IncompatibleCheckpoints) {
  try {
    load_generator(root_ / "run1/stage1.ckpt", root_ / "run2/stage2.ckpt");
    FAIL() << "expected an incompatibility error";
  } catch (const std::runtime_error& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("stage 1 ["), std::string::npos) << m;
    EXPECT_NE(m.find("stage 2 ["), std::string::npos) << m;
  }
  EXPECT_THROW(load_generator(root_ / "run1/stage2.ckpt", root_ / "run1/stage2.ckpt"), std::runtime_error);
}

}  // namespace
}  // namespace vq3d
