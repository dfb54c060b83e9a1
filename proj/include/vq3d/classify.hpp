#pragma once

// Downstream tumour-type classification: 3D residual classifier, focal loss
// with class weights, traditional augmentations and the three training-data
// protocols evaluated over disjoint validation trials.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vq3d/autograd.hpp"
#include "vq3d/nn/module.hpp"
#include "vq3d/random.hpp"
#include "vq3d/volume.hpp"

namespace vq3d {

struct RunConfig;

// ---- class weights -------------------------------------------------------------

enum class WeightMode { paper, inverse, none };

WeightMode parse_weight_mode(const std::string& s);
std::string weight_mode_name(WeightMode m);

/// paper: n_c / N. inverse: 1 - n_c / N. none: all ones.
/// Labels must lie in [0, classes); an empty class is an error.
std::vector<double> class_weights(const std::vector<int>& labels, int classes, WeightMode mode);

/// Weights over the "train" split of a manifest.
std::vector<double> class_weights(const DatasetManifest& m, int classes, WeightMode mode);

// ---- augmentation ----------------------------------------------------------------

/// Mirrors the width axis.
Volume flip_lr(const Volume& v);

/// Rotates every depth slice about the slice centre. Relative to the centre a
/// voxel at (y, x) moves to (x sin t + y cos t, x cos t - y sin t), so the
/// polar angle atan2(y, x) grows by `degrees`. Trilinear; outside is -1.
Volume rotate_inplane(const Volume& v, double degrees);

/// Zooms about the volume centre by `factor` (> 1 enlarges). Trilinear.
Volume scale_volume(const Volume& v, double factor);

/// Random displacement field: N(0, sigma^2) voxel offsets per axis on a 4^3
/// control grid spanning the volume, trilinearly upsampled, then a trilinear
/// backward warp.
Volume elastic_deform(const Volume& v, Rng& rng, double sigma);

struct AugmentOptions {
  double max_rotation_deg = 30.0;
  double max_scale = 1.5;
  double elastic_sigma = 2.0;
  double prob = 0.5;  // independent probability of each operation
};

/// Flip, rotation in [-max, max], zoom in [1, max_scale] and elastic
/// deformation, each applied with probability `prob`; clamped to [-1, 1].
Volume augment_traditional(const Volume& v, uint64_t seed, const AugmentOptions& opts = {});

// ---- classifier --------------------------------------------------------------------

enum class ClassifierPreset { toy, resnet50 };

ClassifierPreset parse_preset(const std::string& s);

struct ClassifierConfig {
  ClassifierPreset preset = ClassifierPreset::toy;
  int64_t in_edge = 32;
  int64_t base_channels = 8;
  int64_t classes = 2;
  int64_t epochs = 50;
  int64_t finetune_epochs = 50;
  int64_t batch = 4;
  double lr = 1e-3;
  double finetune_lr = 1e-4;
  double focal_gamma = 2.0;
  WeightMode weights = WeightMode::paper;
  AugmentOptions augment;

  static ClassifierConfig from(const RunConfig& cfg);
  void validate() const;
};

/// toy: strided 3^3 stem and three basic-block stages (1x, 2x, 4x base width).
/// resnet50: 7^3 stem and bottleneck stages of 3, 4, 6, 3 blocks at widths
/// 1x..8x base with expansion 4.
template <typename T>
class ResNet3d : public nn::Module<T> {
 public:
  ResNet3d(const ClassifierConfig& cfg, Rng& rng);
  ~ResNet3d() override;
  /// [N,1,E,E,E] -> logits [N,classes]
  ag::Var<T> forward(const ag::Var<T>& x);

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

struct TrainSet {
  std::vector<const Volume*> volumes;
  std::vector<int> labels;
};

/// Adam on the focal loss with per-class weights from `weights` computed on
/// this set. Returns the mean loss of the final epoch.
double train_classifier(ResNet3d<float>& model, const TrainSet& data, const ClassifierConfig& cfg, int64_t epochs,
                        double lr, uint64_t seed);

/// Softmax probability of class 1 per volume, in eval mode.
std::vector<double> predict_scores(ResNet3d<float>& model, const std::vector<const Volume*>& volumes,
                                   int64_t batch = 8);

// ---- metrics -------------------------------------------------------------------------

struct BinaryMetrics {
  double auc = 0, f1 = 0, accuracy = 0, precision = 0, recall = 0;
};

/// Class 1 is positive; predicted positive iff score >= threshold. AUC is the
/// Mann-Whitney statistic with ties counted one half. Precision, recall and F1
/// are 0 when their denominators are 0. Both classes must be present.
BinaryMetrics binary_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                             double threshold = 0.5);

struct MetricSummary {
  BinaryMetrics mean, sd;  // population standard deviation
};
MetricSummary summarize(const std::vector<BinaryMetrics>& runs);

// ---- protocols ---------------------------------------------------------------------

enum class Protocol { a, b, c };

Protocol parse_protocol(const std::string& s);
std::string protocol_name(Protocol p);

struct TrialPlan {
  Protocol protocol = Protocol::a;
  int64_t trials = 3;
  double train_fraction = 0.85;
  uint64_t seed = 0;
};

/// Class-balanced validation indices per trial, pairwise disjoint. Each trial
/// holds out round((1 - train_fraction) * n_minority) volumes per class.
/// Throws std::invalid_argument when the split cannot be made.
std::vector<std::vector<int64_t>> plan_validation(const std::vector<int>& labels, const TrialPlan& plan);

struct ClassifyData {
  std::vector<Volume> train;
  std::vector<int> train_labels;
  std::vector<Volume> test;
  std::vector<int> test_labels;
  std::vector<Volume> synthetic;  // minority-class samples, protocol c only
};

struct TrialResult {
  int64_t trial = 0;
  std::vector<int64_t> validation;
  int64_t train_count = 0;
  int64_t pretrain_count = 0;
  double final_loss = 0;
  BinaryMetrics val, test;
};

struct ProtocolResult {
  Protocol protocol = Protocol::a;
  std::vector<TrialResult> trials;
  MetricSummary test;

  /// One JSON object per trial plus an aggregate record.
  std::string jsonl() const;
  std::string table() const;
};

/// a: imbalanced real. b: minority topped up with traditional augmentations.
/// c: pretrain on real majority + synthetic minority, then fine-tune on a
/// balanced real subset. Every feasibility check runs before any training.
/// Trials run concurrently and each depends only on (plan.seed, trial).
ProtocolResult run_protocol(const TrialPlan& plan, const ClassifierConfig& cfg, const ClassifyData& data);

}  // namespace vq3d
