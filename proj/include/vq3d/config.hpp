#pragma once

// Run configuration: a flat `key = value` file. Every key has a typed default;
// unknown keys and malformed values are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vq3d/codebook.hpp"
#include "vq3d/losses.hpp"
#include "vq3d/transformer.hpp"
#include "vq3d/vqgan.hpp"

namespace vq3d {

struct Stage1Schedule {
  int64_t epochs = 4000;
  double lr = 1e-4;
  double lr_min = 0.0;  // cosine floor, reached after the last epoch
  double disc_lr = 1e-4;
  int64_t batch = 3;
  int64_t perceptual_slices = 3;
  int64_t checkpoint_every = 100;  // epochs; the final epoch is always saved
};

struct Stage2Schedule {
  int64_t epochs = 1500;
  double lr = 4.5e-6;
  double weight_decay = 0.01;
  int64_t batch = 3;
  double mask_ratio = 0.5;
  int64_t checkpoint_every = 100;
};

struct EvalSettings {
  std::string mmd_kernel = "linear";  // linear | rbf
  int64_t mmd_batch = 3;
  int64_t mmd_tests = 100;
  int64_t msssim_pairs = 1000;
  int64_t msssim_scales = 5;
  int64_t ssim_window = 7;
  int64_t extractor_seed = 7;
};

struct ClassifySettings {
  std::string preset = "toy";  // toy | resnet50
  int64_t base_channels = 8;
  int64_t epochs = 50;
  int64_t finetune_epochs = 50;
  int64_t batch = 4;
  double lr = 1e-3;
  double finetune_lr = 1e-4;
  double focal_gamma = 2.0;
  std::string class_weights = "paper";  // paper (n_c / N) | inverse | none
  int64_t trials = 3;
  double train_fraction = 0.85;
  double elastic_sigma = 2.0;
  double augment_prob = 0.5;
};

struct RunConfig {
  uint64_t seed = 0;
  std::string output_dir = "runs";
  std::string volume_format = "vq3d";  // vq3d | nii | nii.gz

  NetworkConfig net;
  CodebookOptions codebook;
  double codebook_beta = 0.25;
  LossWeights loss;
  Stage1Schedule stage1;

  int64_t tf_layers = 8;
  int64_t tf_heads = 8;
  int64_t tf_model_dim = 512;
  Stage2Schedule stage2;
  SamplingOptions sampling;

  EvalSettings eval;
  ClassifySettings classify;

  /// Shrunk settings for 32^3 desk-scale runs.
  static RunConfig toy();

  /// Codebook options with dim tied to net.n_z.
  CodebookOptions codebook_options() const {
    auto o = codebook;
    o.dim = net.n_z;
    return o;
  }

  /// Transformer shape implied by the network and codebook settings.
  TransformerConfig transformer() const;

  void validate() const;

  /// Every key, one per line, in a fixed order; parse(echo()) == *this.
  std::string echo() const;
  /// Applies `key = value` lines on top of `base`. '#' starts a comment.
  static RunConfig parse(const std::string& text, const RunConfig& base, const std::string& origin = "");
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path, const RunConfig& base);
  static RunConfig load(const std::filesystem::path& path);
  /// Single assignment with the same typing rules as the file parser.
  void set(const std::string& key, const std::string& value);

  static std::vector<std::string> keys();

  bool operator==(const RunConfig& o) const { return echo() == o.echo(); }
};

}  // namespace vq3d
