#pragma once

// Volumes, masks, preprocessing and file formats.
//
// A Volume is a dense [depth, height, width] grid of floats stored row-major
// (width fastest).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vq3d {

struct Volume {
  int64_t d = 0, h = 0, w = 0;
  std::vector<float> data;
  std::array<float, 3> spacing{1.f, 1.f, 1.f};

  Volume() = default;
  Volume(int64_t d_, int64_t h_, int64_t w_, float fill = 0.f);

  int64_t size() const { return d * h * w; }
  int64_t index(int64_t z, int64_t y, int64_t x) const { return (z * h + y) * w + x; }
  float& at(int64_t z, int64_t y, int64_t x) { return data[static_cast<size_t>(index(z, y, x))]; }
  float at(int64_t z, int64_t y, int64_t x) const { return data[static_cast<size_t>(index(z, y, x))]; }
  bool same_shape(const Volume& o) const { return d == o.d && h == o.h && w == o.w; }
  std::string shape_str() const;

  bool operator==(const Volume& o) const { return same_shape(o) && data == o.data; }
};

struct SegmentationMask {
  int64_t d = 0, h = 0, w = 0;
  std::vector<uint8_t> data;

  SegmentationMask() = default;
  SegmentationMask(int64_t d_, int64_t h_, int64_t w_, uint8_t fill = 0);
  int64_t size() const { return d * h * w; }
  uint8_t& at(int64_t z, int64_t y, int64_t x) { return data[static_cast<size_t>((z * h + y) * w + x)]; }

  /// Every nonzero voxel of `v` becomes 1.
  static SegmentationMask from_volume(const Volume& v);
};

struct Slice2D {
  int64_t rows = 0, cols = 0;
  std::vector<float> data;
  float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
};

enum class SlicePlane { axial, coronal, sagittal };

SlicePlane parse_plane(const std::string& s);
std::string plane_name(SlicePlane p);

/// Min-max map onto [-1, 1]. A constant grid maps to all -1.
Volume normalize(const Volume& raw);

/// brain * mask, all-zero slices removed along every axis, then centre
/// cropped or zero padded to target^3.
Volume extract_roi(const Volume& brain, const SegmentationMask& mask, int64_t target);
/// extract_roi followed by normalize.
Volume preprocess_case(const Volume& brain, const SegmentationMask& mask, int64_t target);

/// axial: v[:, :, i] (D x H); coronal: v[:, i, :] (D x W); sagittal: v[i, :, :] (H x W).
Slice2D slice(const Volume& v, SlicePlane plane, int64_t i);
int64_t slice_count(const Volume& v, SlicePlane plane);
/// Inverse of slicing every index of one plane.
Volume restack(const std::vector<Slice2D>& slices, SlicePlane plane);

/// Procedural tumour-like ROI: textured anisotropic ellipsoids on a zero
/// background, normalized to [-1, 1]. A pure function of its arguments.
Volume make_synthetic_roi(uint64_t seed, int64_t edge, int blobs);

struct SyntheticCase {
  Volume brain;
  SegmentationMask mask;
};

/// A make_synthetic_roi tumour embedded at a seed-dependent offset in a
/// (1.5 * roi_edge)^3 volume of smooth positive tissue, with its mask.
SyntheticCase make_synthetic_case(uint64_t seed, int64_t roi_edge, int blobs);

// ---- files -------------------------------------------------------------------

/// Raw format: "VQ3D", int32 LE d, h, w, then d*h*w float32 LE.
void write_raw(const Volume& v, const std::filesystem::path& path);
Volume read_raw(const std::filesystem::path& path);

/// NIfTI-1 single file (.nii or .nii.gz). Volume(z, y, x) = image(i=z, j=y, k=x).
void write_nifti(const Volume& v, const std::filesystem::path& path);
Volume read_nifti(const std::filesystem::path& path);

/// Dispatches on extension: .vq3d (raw), .nii, .nii.gz.
void write_volume(const Volume& v, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);
bool is_volume_file(const std::filesystem::path& path);

// ---- manifests ---------------------------------------------------------------

struct ManifestEntry {
  std::string path;
  int label = 0;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  /// Directory that relative paths are resolved against.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestEntry& e) const;
  std::vector<ManifestEntry> split(const std::string& tag) const;
  void validate() const;
};

/// One "path<TAB>label<TAB>split" record per line; '#' starts a comment.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

}  // namespace vq3d
