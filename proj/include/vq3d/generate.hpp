#pragma once

// Sampling new volumes: transformer tokens -> codebook lookup -> decoder.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "vq3d/train.hpp"

namespace vq3d {

struct Generator {
  std::unique_ptr<Stage1Model> stage1;
  Stage2Bundle stage2;
};

/// Loads both checkpoints and checks that they agree on K, n_z, latent_edge
/// and the stage-1 weights the prior was trained on.
Generator load_generator(const std::filesystem::path& stage1_ckpt, const std::filesystem::path& stage2_ckpt);

Volume generate_volume(Generator& g, uint64_t seed, const SamplingOptions& opts);

struct GeneratedBatch {
  std::vector<Volume> volumes;
  std::vector<std::filesystem::path> files;
  std::filesystem::path manifest;
};

/// Seeds base_seed .. base_seed + n - 1; files are named gen_<seed>.<ext>
/// and listed in <out_dir>/manifest.tsv with `label` and split "train".
GeneratedBatch generate_batch(Generator& g, int64_t n, uint64_t base_seed, const SamplingOptions& opts,
                              const std::filesystem::path& out_dir, const std::string& format = "vq3d",
                              int label = 1);

}  // namespace vq3d
