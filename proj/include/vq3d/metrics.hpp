#pragma once

// Evaluation metrics for generated volumes. All inputs are in [-1, 1]; the
// data range is 2.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vq3d/volume.hpp"

namespace vq3d {

enum class MmdKernel { linear, rbf };
MmdKernel parse_kernel(const std::string& s);
std::string kernel_name(MmdKernel k);

/// Unbiased U-statistic for equal batch sizes,
///   1/(B(B-1)) sum_{i != j} k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i),
/// averaged over `tests` batch draws. Draw t samples both batches from
/// make_rng(seed, t) restarted per set, so equal-sized sets use equal indices.
/// The RBF bandwidth is the median pairwise squared distance in each pooled
/// draw.
double mmd2(const std::vector<Volume>& real, const std::vector<Volume>& gen, int64_t batch, int64_t tests, uint64_t seed,
            MmdKernel kernel = MmdKernel::linear);
/// Single-batch estimate on raw feature rows (one sample per row).
double mmd2_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, MmdKernel kernel);

struct SsimOptions {
  int64_t window = 7;
  double sigma = 1.5;
  double range = 2.0;
  int64_t scales = 5;
};

/// Mean SSIM map of two equally sized images (valid Gaussian filtering).
double ssim2d(const Slice2D& a, const Slice2D& b, const SsimOptions& o);
/// Multi-scale SSIM: product of contrast-structure means at the first
/// scales - 1 levels and the full SSIM at the last, with the standard
/// weights renormalized to `scales` entries. Negative factors clamp to 0.
double ms_ssim2d(const Slice2D& a, const Slice2D& b, const SsimOptions& o);
/// Mean of ms_ssim2d over axial slices.
double ms_ssim_volume(const Volume& a, const Volume& b, const SsimOptions& o);
/// Mean over `pairs` random unordered pairs i != j drawn with make_rng(seed, p).
double ms_ssim_pairwise(const std::vector<Volume>& set, int64_t pairs, uint64_t seed, const SsimOptions& o);
/// Smallest image edge accepted by ms_ssim2d.
int64_t ms_ssim_min_edge(const SsimOptions& o);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
  int64_t count = 0;
};
GaussianStats gaussian_stats(const Eigen::MatrixXd& rows);

constexpr double kFidJitter = 1e-6;
/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}) with eps added to both
/// diagonals.
double frechet_distance(const GaussianStats& a, const GaussianStats& b, double eps = kFidJitter);

/// Pooled extractor features of every slice along `plane` of every volume.
Eigen::MatrixXd slice_features(const std::vector<Volume>& set, SlicePlane plane, uint64_t extractor_seed);
double fid_plane(const std::vector<Volume>& real, const std::vector<Volume>& gen, SlicePlane plane,
                 uint64_t extractor_seed);
std::string extractor_id(uint64_t extractor_seed);

constexpr double kPsnrCap = 99.0;
/// 3D-windowed SSIM (Gaussian window, valid filtering, range 2).
double ssim3d(const Volume& a, const Volume& b, int64_t window = 7, double sigma = 1.5);
/// 10 log10(4 / MSE), capped at kPsnrCap (identical inputs give the cap).
double psnr(const Volume& a, const Volume& b);

struct NearestMatch {
  int64_t index = -1;
  double score = 0;
};
/// argmax of ssim3d over `real`; ties go to the lowest index.
NearestMatch nearest_real(const Volume& gen, const std::vector<Volume>& real);

struct MetricRecord {
  std::string name;
  double value = 0;
  nlohmann::json config;
  uint64_t seed = 0;
};

struct MetricsReport {
  std::vector<MetricRecord> records;
  void add(std::string name, double value, nlohmann::json config, uint64_t seed);
  std::string jsonl() const;
  std::string table() const;
};

}  // namespace vq3d
