#pragma once

// Vector-quantization codebook with EMA updates.
//
// Latent fields are passed channels-last: n positions x n_z values.

#include <cstdint>
#include <string>
#include <vector>

#include "vq3d/autograd.hpp"
#include "vq3d/random.hpp"
#include "vq3d/tensor.hpp"

namespace vq3d {

class Checkpoint;

struct CodebookOptions {
  int64_t codes = 512;
  int64_t dim = 64;
  double decay = 0.99;
  double epsilon = 1e-5;
  /// Consecutive updates without an assignment before a code is re-seeded;
  /// 0 disables revival.
  int64_t dead_after = 100;
};

struct UsageStats {
  std::vector<int64_t> counts;
  double perplexity = 0;
};

class Codebook {
 public:
  Codebook() = default;
  Codebook(const CodebookOptions& opts, uint64_t seed);

  int64_t codes() const { return opts_.codes; }
  int64_t dim() const { return opts_.dim; }
  const CodebookOptions& options() const { return opts_; }
  const Tensor<float>& embeddings() const { return embed_; }
  const Tensor<float>& cluster_size() const { return cluster_size_; }
  const Tensor<float>& embed_sum() const { return embed_sum_; }
  int64_t updates() const { return updates_; }
  bool initialized() const { return initialized_; }

  /// Overwrites all entries; resets the EMA state to match (N = 1, m = c).
  void set_embeddings(const Tensor<float>& e);
  void set_decay(double g) { opts_.decay = g; }

  /// Data-dependent initialization: entries are drawn from the rows of z
  /// (with replacement when there are fewer rows than codes).
  void init_from(const float* z, int64_t n, uint64_t seed);

  /// Nearest entry per row, ties to the lowest index. `zq` (optional)
  /// receives the looked-up vectors.
  void quantize(const float* z, int64_t n, int64_t* idx, float* zq) const;
  std::vector<int64_t> quantize(const Tensor<float>& z, Tensor<float>* zq = nullptr) const;

  /// Rows of the table for each index; throws on an invalid index.
  Tensor<float> lookup(const std::vector<int64_t>& idx) const;

  /// One EMA step from a batch of rows and their assignments, followed by
  /// dead-code revival from the same rows.
  void ema_update(const float* z, int64_t n, const std::vector<int64_t>& idx);

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  void refresh_from_ema();

  CodebookOptions opts_;
  uint64_t seed_ = 0;
  Tensor<float> embed_, cluster_size_, embed_sum_;
  std::vector<int64_t> idle_;
  int64_t updates_ = 0;
  bool initialized_ = false;
};

UsageStats usage_stats(const std::vector<int64_t>& idx, int64_t codes);

/// Eq. 4 with the codebook term carried by EMA: the value is
/// mean_pos ||sg[z] - zq||^2 + 0.25 mean_pos ||sg[zq] - z||^2 but only the
/// second term is differentiated. z is [n, n_z].
template <typename T>
ag::Var<T> codebook_loss(const ag::Var<T>& z, const Tensor<T>& zq, T beta = T(0.25));

}  // namespace vq3d
