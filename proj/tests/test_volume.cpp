#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "vq3d/fileio.hpp"
#include "vq3d/random.hpp"
#include "vq3d/volume.hpp"

namespace vq3d {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("vq3d_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Volume random_volume(uint64_t seed, int64_t d, int64_t h, int64_t w, float lo = 0, float hi = 1) {
  Rng rng = make_rng(seed);
  Volume v(d, h, w);
  for (auto& x : v.data) x = static_cast<float>(uniform(rng, lo, hi));
  return v;
}

TEST(Normalize, AffineEndpoints) {
  Volume v(1, 1, 3);
  v.data = {0.f, 50.f, 100.f};
  auto n = normalize(v);
  EXPECT_FLOAT_EQ(n.data[0], -1.f);
  EXPECT_FLOAT_EQ(n.data[1], 0.f);
  EXPECT_FLOAT_EQ(n.data[2], 1.f);
}

TEST(Normalize, ConstantMapsToBackground) {
  Volume v(3, 3, 3, 5.f);
  for (float x : normalize(v).data) EXPECT_EQ(x, -1.f);
}

TEST(Normalize, RandomGridMatchesIndependentAffineMap) {
  auto v = random_volume(3, 8, 8, 8, 2.f, 9.f);
  double lo = 1e30, hi = -1e30;
  for (float x : v.data) lo = std::min<double>(lo, x), hi = std::max<double>(hi, x);
  auto n = normalize(v);
  float mn = 2, mx = -2;
  for (size_t i = 0; i < n.data.size(); ++i) {
    const double want = (v.data[i] - lo) / (hi - lo) * 2 - 1;
    EXPECT_NEAR(n.data[i], want, 1e-6);
    mn = std::min(mn, n.data[i]);
    mx = std::max(mx, n.data[i]);
  }
  EXPECT_NEAR(mn, -1.f, 1e-6);
  EXPECT_NEAR(mx, 1.f, 1e-6);
  auto again = normalize(n);
  for (size_t i = 0; i < n.data.size(); ++i) EXPECT_NEAR(again.data[i], n.data[i], 1e-6);
}

TEST(Normalize, RejectsNonFinite) {
  Volume v(1, 1, 2);
  v.data = {0.f, NAN};
  EXPECT_THROW(normalize(v), std::invalid_argument);
}

TEST(ExtractRoi, BratsShapeToTarget) {
  Volume brain(240, 240, 155, 1.f);
  SegmentationMask mask(240, 240, 155);
  for (int64_t z = 60; z < 200; ++z)
    for (int64_t y = 100; y < 150; ++y)
      for (int64_t x = 20; x < 90; ++x) mask.at(z, y, x) = 1;
  auto roi = extract_roi(brain, mask, 128);
  EXPECT_EQ(roi.d, 128);
  EXPECT_EQ(roi.h, 128);
  EXPECT_EQ(roi.w, 128);
}

TEST(ExtractRoi, FullMaskCentresInPadding) {
  auto brain = random_volume(5, 100, 100, 100, 0.5f, 1.f);
  SegmentationMask mask(100, 100, 100, 1);
  auto roi = extract_roi(brain, mask, 128);
  // (128 - 100) / 2 = 14 voxels of padding on the low side.
  for (int64_t z = 0; z < 100; z += 7)
    for (int64_t y = 0; y < 100; y += 11)
      for (int64_t x = 0; x < 100; x += 13) ASSERT_EQ(roi.at(z + 14, y + 14, x + 14), brain.at(z, y, x));
  EXPECT_EQ(roi.at(0, 0, 0), 0.f);
  EXPECT_EQ(roi.at(127, 127, 127), 0.f);
  EXPECT_EQ(roi.at(13, 60, 60), 0.f);
  EXPECT_EQ(roi.at(114, 60, 60), 0.f);
}

TEST(ExtractRoi, CropsAroundRegion) {
  Volume brain(40, 40, 40, 2.f);
  SegmentationMask mask(40, 40, 40);
  for (int64_t z = 5; z < 35; ++z)
    for (int64_t y = 10; y < 12; ++y)
      for (int64_t x = 0; x < 40; ++x) mask.at(z, y, x) = 1;
  auto roi = extract_roi(brain, mask, 16);
  // depth 30 -> crop starting at 7; height 2 -> pad 7; width 40 -> crop 12.
  EXPECT_EQ(roi.at(0, 7, 0), 2.f);
  EXPECT_EQ(roi.at(0, 6, 0), 0.f);
  EXPECT_EQ(roi.at(15, 8, 15), 2.f);
  EXPECT_EQ(roi.at(15, 9, 15), 0.f);
}

TEST(ExtractRoi, EmptyMaskIsAnError) {
  Volume brain(8, 8, 8, 1.f);
  SegmentationMask mask(8, 8, 8);
  EXPECT_THROW(extract_roi(brain, mask, 8), std::invalid_argument);
}

TEST(Slicing, RestackRoundTripAllPlanes) {
  auto v = random_volume(9, 5, 6, 7);
  for (auto plane : {SlicePlane::axial, SlicePlane::coronal, SlicePlane::sagittal}) {
    std::vector<Slice2D> s;
    for (int64_t i = 0; i < slice_count(v, plane); ++i) s.push_back(slice(v, plane, i));
    EXPECT_EQ(restack(s, plane), v) << plane_name(plane);
  }
}

TEST(Slicing, ShapesAndOrientation) {
  auto v = random_volume(2, 4, 5, 6);
  auto a = slice(v, SlicePlane::axial, 2);
  EXPECT_EQ(a.rows, 4);
  EXPECT_EQ(a.cols, 5);
  EXPECT_EQ(a.at(3, 1), v.at(3, 1, 2));
  auto c = slice(v, SlicePlane::coronal, 4);
  EXPECT_EQ(c.rows, 4);
  EXPECT_EQ(c.cols, 6);
  EXPECT_EQ(c.at(1, 5), v.at(1, 4, 5));
  auto s = slice(v, SlicePlane::sagittal, 3);
  EXPECT_EQ(s.rows, 5);
  EXPECT_EQ(s.cols, 6);
  EXPECT_EQ(s.at(2, 2), v.at(3, 2, 2));
  EXPECT_THROW(slice(v, SlicePlane::axial, 6), std::out_of_range);
  EXPECT_THROW(slice(v, SlicePlane::sagittal, -1), std::out_of_range);
  Volume k(8, 8, 8, 0.3f);
  for (float x : slice(k, SlicePlane::coronal, 1).data) EXPECT_EQ(x, 0.3f);
}

TEST(Synthetic, DeterministicAndSeedSensitive) {
  auto a = make_synthetic_roi(1, 32, 2);
  auto b = make_synthetic_roi(1, 32, 2);
  auto c = make_synthetic_roi(2, 32, 2);
  EXPECT_EQ(a, b);
  int64_t diff = 0;
  for (size_t i = 0; i < a.data.size(); ++i) diff += a.data[i] != c.data[i];
  EXPECT_GE(diff, a.size() / 100);
}

TEST(Synthetic, RangeAndInteriorSupport) {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    auto v = make_synthetic_roi(seed, 16 + 8 * static_cast<int64_t>(seed % 3), 1 + static_cast<int>(seed % 3));
    float mn = 2, mx = -2;
    for (float x : v.data) mn = std::min(mn, x), mx = std::max(mx, x);
    EXPECT_EQ(mn, -1.f);
    EXPECT_EQ(mx, 1.f);
    for (auto plane : {SlicePlane::axial, SlicePlane::coronal, SlicePlane::sagittal}) {
      for (int64_t i : {int64_t{0}, slice_count(v, plane) - 1})
        for (float x : slice(v, plane, i).data) ASSERT_EQ(x, -1.f);
    }
  }
  EXPECT_THROW(make_synthetic_roi(1, 15, 1), std::invalid_argument);
  EXPECT_THROW(make_synthetic_roi(1, 16, 0), std::invalid_argument);
}

TEST(Files, RawRoundTripAndLayout) {
  auto dir = scratch_dir("raw");
  auto v = random_volume(4, 3, 4, 5, -1, 1);
  write_raw(v, dir / "v.vq3d");
  EXPECT_EQ(read_volume(dir / "v.vq3d"), v);
  // Bit-level layout: magic, LE dims, then row-major floats.
  const std::string b = read_file(dir / "v.vq3d");
  ASSERT_EQ(b.size(), 16 + 60 * 4u);
  EXPECT_EQ(b.substr(0, 4), "VQ3D");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 3);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 4);
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 5);
  float first;
  std::memcpy(&first, b.data() + 16, 4);
  EXPECT_EQ(first, v.data[0]);
  write_file_atomic(dir / "bad.vq3d", "NOPE");
  EXPECT_THROW(read_raw(dir / "bad.vq3d"), std::runtime_error);
}

TEST(Files, NiftiRoundTripPlainAndGzip) {
  auto dir = scratch_dir("nifti");
  auto v = random_volume(6, 4, 5, 6, -1, 1);
  v.spacing = {1.5f, 2.f, 0.5f};
  for (const char* name : {"v.nii", "v.nii.gz"}) {
    write_volume(v, dir / name);
    auto r = read_volume(dir / name);
    EXPECT_EQ(r, v) << name;
    EXPECT_EQ(r.spacing, v.spacing);
  }
  EXPECT_LT(fs::file_size(dir / "v.nii.gz"), fs::file_size(dir / "v.nii") + 1);
  EXPECT_THROW(write_volume(v, dir / "v.png"), std::invalid_argument);
}

TEST(Files, NiftiInt16WithScaling) {
  // Hand-built header: int16 voxels, slope 0.5, intercept 1.
  std::string b(352 + 2 * 8, '\0');
  auto put16 = [&](size_t off, int16_t v) { std::memcpy(b.data() + off, &v, 2); };
  auto putf = [&](size_t off, float v) { std::memcpy(b.data() + off, &v, 4); };
  int32_t hdr = 348;
  std::memcpy(b.data(), &hdr, 4);
  put16(40, 3);
  put16(42, 2), put16(44, 2), put16(46, 2);
  put16(70, 4);
  put16(72, 16);
  putf(108, 352);
  putf(112, 0.5f);
  putf(116, 1.f);
  std::memcpy(b.data() + 344, "n+1", 4);
  for (int16_t i = 0; i < 8; ++i) put16(352 + 2 * i, i);
  auto dir = scratch_dir("nifti16");
  write_file_atomic(dir / "s.nii", b);
  auto v = read_nifti(dir / "s.nii");
  // File index i + 2j + 4k holds i + 2j + 4k, i.e. Volume(z, y, x) = z + 2y + 4x.
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) EXPECT_EQ(v.at(z, y, x), 0.5f * (z + 2 * y + 4 * x) + 1.f);
}

TEST(Manifest, RoundTripAndValidation) {
  auto dir = scratch_dir("manifest");
  DatasetManifest m;
  m.entries = {{"a.vq3d", 0, "train"}, {"b.vq3d", 1, "val"}, {"c.vq3d", 1, "test"}};
  write_manifest(m, dir / "m.tsv");
  auto r = read_manifest(dir / "m.tsv");
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.entries[1].path, "b.vq3d");
  EXPECT_EQ(r.entries[1].label, 1);
  EXPECT_EQ(r.entries[2].split, "test");
  EXPECT_EQ(r.resolve(r.entries[0]), dir / "a.vq3d");
  EXPECT_EQ(r.split("train").size(), 1u);

  write_file_atomic(dir / "dup.tsv", "a\t0\ttrain\na\t1\ttest\n");
  EXPECT_THROW(read_manifest(dir / "dup.tsv"), std::invalid_argument);
  write_file_atomic(dir / "split.tsv", "a\t0\tholdout\n");
  EXPECT_THROW(read_manifest(dir / "split.tsv"), std::invalid_argument);
  write_file_atomic(dir / "label.tsv", "a\tHGG\ttrain\n");
  EXPECT_THROW(read_manifest(dir / "label.tsv"), std::runtime_error);
}

}  // namespace
}  // namespace vq3d
