#pragma once

// Stage 2: token grids, masking and the causal transformer prior.

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vq3d/nn/module.hpp"

namespace vq3d {

struct TokenGrid {
  int64_t d = 0, h = 0, w = 0;
  std::vector<int64_t> idx;  // depth-major, then height, then width
  int64_t size() const { return d * h * w; }
  bool operator==(const TokenGrid& o) const { return d == o.d && h == o.h && w == o.w && idx == o.idx; }
};

/// Raster-scan order.
std::vector<int64_t> linearize(const TokenGrid& g);
TokenGrid delinearize(const std::vector<int64_t>& seq, int64_t d, int64_t h, int64_t w);

struct MaskSpec {
  std::vector<uint8_t> keep;  // 1 = unmasked, 0 = masked
  double ratio = 0;
  uint64_t seed = 0;
  int64_t masked_count() const;
};

/// round(rho * S) with halves rounded up.
int64_t mask_count(double ratio, int64_t length);

/// Replaces round(rho * S) positions, drawn without replacement, by
/// uniformly random codes in [0, K) other than the original one.
std::pair<std::vector<int64_t>, MaskSpec> apply_mask(const std::vector<int64_t>& seq, double ratio, uint64_t seed,
                                                     int64_t codes);

struct TransformerConfig {
  int64_t layers = 8;
  int64_t heads = 8;
  int64_t model_dim = 512;
  int64_t codes = 512;
  int64_t seq_len = 64;

  void validate() const;
  std::string str() const;
};

template <typename T>
class TransformerBlock : public nn::Module<T> {
 public:
  TransformerBlock(int64_t dim, int64_t heads, int64_t layers, Rng& rng);
  /// x [B*L, D] -> [B*L, D]
  ag::Var<T> forward(const ag::Var<T>& x, int64_t batch, int64_t len);

 private:
  int64_t dim_, heads_;
  nn::LayerNorm<T> ln1_, ln2_;
  nn::Linear<T> qkv_, proj_, fc1_, fc2_;
};

/// Decoder-only transformer over [start, c_0, ..., c_{S-2}]; the output at
/// position i gives logits for token i.
template <typename T>
class MaskedTransformer : public nn::Module<T> {
 public:
  MaskedTransformer(const TransformerConfig& cfg, Rng& rng);
  const TransformerConfig& config() const { return cfg_; }
  int64_t start_token() const { return cfg_.codes; }

  /// `seqs` holds B sequences of equal length L <= S (the corrupted tokens
  /// c_0..c_{L-1}). Returns logits [B*L, K] where row b*L + i conditions on
  /// c_0..c_{i-1} only.
  ag::Var<T> forward_logits(const std::vector<std::vector<int64_t>>& seqs);

 private:
  TransformerConfig cfg_;
  nn::Embedding<T> tok_, pos_;
  std::vector<std::unique_ptr<TransformerBlock<T>>> blocks_;
  nn::LayerNorm<T> ln_f_;
  nn::Linear<T> head_;
};

/// Mean cross-entropy over masked positions (keep == 0); exactly 0 when
/// nothing is masked. logits [B*S, K]; targets and keep are concatenated
/// per sequence.
template <typename T>
ag::Var<T> masked_ce_loss(const ag::Var<T>& logits, const std::vector<int64_t>& targets,
                          const std::vector<uint8_t>& keep);

struct SamplingOptions {
  double temperature = 1.0;  // <= 0 selects greedy decoding
  int64_t top_k = 100;       // <= 0 or >= K keeps every code
};

/// First code uniform in [0, K); the rest drawn autoregressively.
std::vector<int64_t> sample_sequence(MaskedTransformer<float>& model, uint64_t seed, const SamplingOptions& opts);
TokenGrid sample_tokens(MaskedTransformer<float>& model, int64_t edge, uint64_t seed, const SamplingOptions& opts);

/// Draws an index from logits after temperature scaling and top-k
/// truncation; ties in greedy mode go to the lowest index.
int64_t sample_from_logits(const float* logits, int64_t k, const SamplingOptions& opts, Rng& rng);

}  // namespace vq3d
