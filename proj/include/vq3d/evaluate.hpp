#pragma once

// Metric suites over volume sets and aggregation of metric logs.

#include <filesystem>
#include <string>
#include <vector>

#include "vq3d/config.hpp"
#include "vq3d/metrics.hpp"
#include "vq3d/train.hpp"

namespace vq3d {

/// Batch-wise MMD^2, pairwise MS-SSIM of both sets, FID on every plane and
/// the mean nearest-real 3D-SSIM of the generated set. Each record carries
/// the settings it was computed with.
MetricsReport evaluate_generation(const std::vector<Volume>& real, const std::vector<Volume>& gen,
                                  const RunConfig& cfg);

/// Mean PSNR and 3D-SSIM of stage-1 reconstructions against their inputs.
MetricsReport evaluate_reconstruction(Stage1Model& model, const std::vector<Volume>& vols, const RunConfig& cfg);

struct MetricAggregate {
  std::string metric;
  int64_t count = 0;
  double mean = 0, sd = 0;  // population standard deviation
};

/// Groups line-delimited records by "metric" and aggregates "value", in
/// order of first appearance. Blank lines are skipped; other malformed lines
/// are errors naming their line number.
std::vector<MetricAggregate> aggregate_metrics(const std::string& jsonl);
std::string aggregate_table(const std::vector<MetricAggregate>& rows);

}  // namespace vq3d
