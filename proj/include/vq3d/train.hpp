#pragma once

// Two-stage training loops and the model bundles they produce.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vq3d/checkpoint.hpp"
#include "vq3d/config.hpp"
#include "vq3d/volume.hpp"

namespace vq3d {

/// Encoder, decoder, discriminator, perceptual extractor and codebook,
/// initialized deterministically from cfg.seed.
class Stage1Model {
 public:
  explicit Stage1Model(const RunConfig& cfg);

  const RunConfig& config() const { return cfg_; }
  Encoder<float>& encoder() { return enc_; }
  Decoder<float>& decoder() { return dec_; }
  Discriminator<float>& discriminator() { return dis_; }
  PerceptualExtractor<float>& perceptual() { return perc_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }

  void set_training(bool on);

  /// Eval-mode encode + quantize; one grid per volume.
  std::vector<TokenGrid> tokenize(const std::vector<Volume>& vols);
  /// Eval-mode lookup + decode.
  Volume decode(const TokenGrid& grid);
  std::vector<Volume> reconstruct(const std::vector<Volume>& vols);

  /// Parameters and buffers under "enc.", "dec.", "dis.", codebook under
  /// "codebook.", plus the config echo.
  void save_to(Checkpoint& ck) const;
  void load_from(const Checkpoint& ck);
  /// Hash over the frozen stage-1 arrays (encoder, decoder, codebook).
  uint64_t frozen_hash() const;

 private:
  RunConfig cfg_;
  Rng init_rng_;
  Encoder<float> enc_;
  Decoder<float> dec_;
  Discriminator<float> dis_;
  PerceptualExtractor<float> perc_;
  Codebook codebook_;
};

/// Stacks equally shaped volumes into [N,1,D,H,W].
Tensor<float> stack_volumes(const std::vector<const Volume*>& vols);

struct TrainOptions {
  std::filesystem::path out_dir;
  /// Continue from this checkpoint (written by the same stage).
  std::filesystem::path resume;
  /// Stop after this many completed epochs (for staged runs); -1 = schedule end.
  int64_t stop_after_epoch = -1;
  bool quiet = false;
  /// Invoked with each step's total loss before the divergence check.
  std::function<void(int64_t step, float& total)> loss_hook;
  std::function<void(const std::string&)> warn;
};

struct Stage1Result {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  int64_t steps = 0;
  int64_t epochs = 0;
  double first_l1 = 0, last_l1 = 0;
};

/// Raised when the total loss turns non-finite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes <out_dir>/stage1.ckpt (periodically and at the end) and
/// <out_dir>/stage1_log.jsonl.
Stage1Result train_stage1(const RunConfig& cfg, const std::vector<Volume>& train, const TrainOptions& opts);

/// Loads a stage-1 checkpoint into a freshly built model.
std::unique_ptr<Stage1Model> load_stage1(const std::filesystem::path& path);

struct Stage2Result {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  int64_t steps = 0;
  double first_ce = 0, last_ce = 0, last_epoch_ce = 0;
  uint64_t stage1_hash = 0;
};

struct Stage2Bundle {
  RunConfig cfg;
  std::unique_ptr<MaskedTransformer<float>> model;
  uint64_t stage1_hash = 0;
};

/// Trains the prior on the tokens of `train` under the frozen stage-1 model;
/// writes <out_dir>/stage2.ckpt and <out_dir>/stage2_log.jsonl.
Stage2Result train_stage2(const RunConfig& cfg, const std::filesystem::path& stage1_ckpt,
                          const std::vector<Volume>& train, const TrainOptions& opts);

Stage2Bundle load_stage2(const std::filesystem::path& path);

/// Cosine decay from lr to lr_min over `epochs`, evaluated at `epoch`.
double cosine_lr(double lr, double lr_min, int64_t epoch, int64_t epochs);

/// Volumes of one manifest split, checked against the configured edge.
std::vector<Volume> load_split(const DatasetManifest& m, const std::string& split, int64_t edge);

}  // namespace vq3d
