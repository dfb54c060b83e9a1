#pragma once

// The subcommands behind the command-line tool. Every stage reads and writes
// under one run directory:
//
//   <root>/raw/        synthetic brains and masks (preprocess --synthetic)
//   <root>/data/       preprocessed ROIs + manifest.tsv
//   <root>/stage1/     stage1.ckpt, stage1_log.jsonl
//   <root>/stage2/     stage2.ckpt, stage2_log.jsonl
//   <root>/generated/  gen_<seed>.<ext> + manifest.tsv
//   <root>/eval/       metrics.jsonl, metrics.txt
//   <root>/classify/   protocol_<p>.jsonl, protocol_<p>.txt

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "vq3d/classify.hpp"
#include "vq3d/config.hpp"
#include "vq3d/evaluate.hpp"
#include "vq3d/generate.hpp"
#include "vq3d/train.hpp"

namespace vq3d::pipeline {

namespace fs = std::filesystem;

struct RunLayout {
  fs::path root;
  fs::path raw() const { return root / "raw"; }
  fs::path data() const { return root / "data"; }
  fs::path data_manifest() const { return data() / "manifest.tsv"; }
  fs::path stage1() const { return root / "stage1"; }
  fs::path stage1_ckpt() const { return stage1() / "stage1.ckpt"; }
  fs::path stage2() const { return root / "stage2"; }
  fs::path stage2_ckpt() const { return stage2() / "stage2.ckpt"; }
  fs::path generated() const { return root / "generated"; }
  fs::path generated_manifest() const { return generated() / "manifest.tsv"; }
  fs::path eval() const { return root / "eval"; }
  fs::path classify() const { return root / "classify"; }
};

struct PreprocessArgs {
  std::optional<fs::path> manifest;  // raw brains; masks sit beside them
  std::string mask_suffix = "_seg";  // brain.nii.gz -> brain_seg.nii.gz
  int64_t synthetic = 0;             // > 0: write this many synthetic cases first
};

/// Mask path for a brain volume: the suffix goes before the extension.
fs::path mask_path(const fs::path& brain, const std::string& suffix);

/// ROI extraction + normalization of every manifest entry. Returns the
/// written manifest.
fs::path preprocess(const RunConfig& cfg, const RunLayout& run, const PreprocessArgs& args);

Stage1Result train_vqgan(const RunConfig& cfg, const RunLayout& run, const fs::path& manifest,
                         const std::optional<fs::path>& resume, bool quiet);

Stage2Result train_transformer(const RunConfig& cfg, const RunLayout& run, const fs::path& manifest,
                               const fs::path& stage1_ckpt, bool quiet);

/// Samples are seeded cfg.seed, cfg.seed + 1, ...
GeneratedBatch generate(const RunConfig& cfg, const RunLayout& run, const fs::path& stage1_ckpt,
                        const fs::path& stage2_ckpt, int64_t count, int label);

/// Generation metrics on the "train" splits of both manifests, plus
/// reconstruction metrics when a stage-1 checkpoint is given.
MetricsReport evaluate(const RunConfig& cfg, const RunLayout& run, const fs::path& real_manifest,
                       const fs::path& generated_manifest, const std::optional<fs::path>& stage1_ckpt);

/// Training pool: "train" and "val" entries; test set: "test" entries. The
/// synthetic manifest (protocol c) contributes every entry.
ProtocolResult classify(const RunConfig& cfg, const RunLayout& run, const fs::path& manifest,
                        const std::optional<fs::path>& synthetic_manifest, Protocol protocol);

}  // namespace vq3d::pipeline
