#include "vq3d/codebook.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vq3d/checkpoint.hpp"
#include "vq3d/kernels/kernels.hpp"
#include "vq3d/ops.hpp"

namespace vq3d {

Codebook::Codebook(const CodebookOptions& opts, uint64_t seed) : opts_(opts), seed_(seed) {
  if (opts.codes < 2) throw std::invalid_argument("codebook needs at least 2 codes");
  if (opts.dim < 1) throw std::invalid_argument("codebook dimension must be positive");
  if (!(opts.decay >= 0 && opts.decay <= 1)) throw std::invalid_argument("codebook decay must lie in [0, 1]");
  Tensor<float> e({opts.codes, opts.dim});
  Rng rng = make_rng(seed, 0xC0DE);
  const double b = 1.0 / static_cast<double>(opts.codes);
  for (auto& v : e.values()) v = static_cast<float>(uniform(rng, -b, b));
  set_embeddings(e);
  initialized_ = false;
}

void Codebook::set_embeddings(const Tensor<float>& e) {
  if (e.rank() != 2 || e.dim(0) != opts_.codes || e.dim(1) != opts_.dim)
    throw std::invalid_argument("codebook: embeddings must be " + shape_str({opts_.codes, opts_.dim}));
  embed_ = e;
  embed_sum_ = e;
  cluster_size_ = Tensor<float>({opts_.codes}, 1.f);
  idle_.assign(static_cast<size_t>(opts_.codes), 0);
  initialized_ = true;
}

void Codebook::init_from(const float* z, int64_t n, uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("codebook init: no vectors");
  Rng rng = make_rng(seed, 0x1A17);
  Tensor<float> e({opts_.codes, opts_.dim});
  std::vector<int64_t> rows;
  if (n >= opts_.codes) {
    rows = sample_without_replacement(rng, n, opts_.codes);
  } else {
    for (int64_t k = 0; k < opts_.codes; ++k) rows.push_back(static_cast<int64_t>(uniform_index(rng, n)));
  }
  for (int64_t k = 0; k < opts_.codes; ++k) {
    const float* src = z + rows[k] * opts_.dim;
    // Jitter separates duplicated rows.
    for (int64_t j = 0; j < opts_.dim; ++j) e[k * opts_.dim + j] = src[j] + static_cast<float>(1e-3 * normal(rng));
  }
  set_embeddings(e);
}

void Codebook::quantize(const float* z, int64_t n, int64_t* idx, float* zq) const {
  const int64_t K = opts_.codes, D = opts_.dim;
  const float* e = embed_.data();
  std::vector<float> dist(static_cast<size_t>(K));
  for (int64_t p = 0; p < n; ++p) {
    const float* zp = z + p * D;
    float best = std::numeric_limits<float>::infinity();
    for (int64_t k = 0; k < K; ++k) {
      dist[k] = kernels::squared_distance(zp, e + k * D, D);
      best = std::min(best, dist[k]);
    }
    // Candidates within float rounding of the minimum are re-ranked in
    // double so near-ties resolve the same way on every ISA.
    const float slack = best * 1e-5f + 1e-30f;
    int64_t arg = -1;
    double arg_d = 0;
    for (int64_t k = 0; k < K; ++k) {
      if (dist[k] > best + slack) continue;
      double acc = 0;
      for (int64_t j = 0; j < D; ++j) {
        const double t = static_cast<double>(zp[j]) - e[k * D + j];
        acc += t * t;
      }
      if (arg < 0 || acc < arg_d) arg = k, arg_d = acc;
    }
    if (arg < 0) throw std::invalid_argument("quantize: non-finite latent vector");
    idx[p] = arg;
    if (zq) std::copy(e + arg * D, e + (arg + 1) * D, zq + p * D);
  }
}

std::vector<int64_t> Codebook::quantize(const Tensor<float>& z, Tensor<float>* zq) const {
  if (z.rank() != 2 || z.dim(1) != opts_.dim)
    throw std::invalid_argument("quantize: latent rows " + shape_str(z.shape()) + " do not match codebook dimension " +
                                std::to_string(opts_.dim));
  std::vector<int64_t> idx(static_cast<size_t>(z.dim(0)));
  if (zq) *zq = Tensor<float>(z.shape());
  quantize(z.data(), z.dim(0), idx.data(), zq ? zq->data() : nullptr);
  return idx;
}

Tensor<float> Codebook::lookup(const std::vector<int64_t>& idx) const {
  const int64_t D = opts_.dim;
  Tensor<float> out({static_cast<int64_t>(idx.size()), D});
  for (size_t p = 0; p < idx.size(); ++p) {
    if (idx[p] < 0 || idx[p] >= opts_.codes)
      throw std::out_of_range("lookup: index " + std::to_string(idx[p]) + " outside [0, " + std::to_string(opts_.codes) + ")");
    std::copy(embed_.data() + idx[p] * D, embed_.data() + (idx[p] + 1) * D, out.data() + static_cast<int64_t>(p) * D);
  }
  return out;
}

void Codebook::refresh_from_ema() {
  const int64_t K = opts_.codes, D = opts_.dim;
  double total = 0;
  for (int64_t k = 0; k < K; ++k) total += cluster_size_[k];
  const double eps = opts_.epsilon;
  for (int64_t k = 0; k < K; ++k) {
    const double smoothed = (cluster_size_[k] + eps) / (total + K * eps) * total;
    for (int64_t j = 0; j < D; ++j)
      embed_[k * D + j] = static_cast<float>(smoothed > 0 ? embed_sum_[k * D + j] / smoothed : 0.0);
  }
}

void Codebook::ema_update(const float* z, int64_t n, const std::vector<int64_t>& idx) {
  const int64_t K = opts_.codes, D = opts_.dim;
  if (static_cast<int64_t>(idx.size()) != n) throw std::invalid_argument("ema_update: assignment count mismatch");
  std::vector<double> counts(static_cast<size_t>(K), 0.0);
  std::vector<double> sums(static_cast<size_t>(K * D), 0.0);
  for (int64_t p = 0; p < n; ++p) {
    const int64_t k = idx[p];
    if (k < 0 || k >= K) throw std::out_of_range("ema_update: invalid assignment " + std::to_string(k));
    counts[k] += 1;
    for (int64_t j = 0; j < D; ++j) sums[k * D + j] += z[p * D + j];
  }
  const double g = opts_.decay;
  for (int64_t k = 0; k < K; ++k) {
    cluster_size_[k] = static_cast<float>(g * cluster_size_[k] + (1 - g) * counts[k]);
    for (int64_t j = 0; j < D; ++j)
      embed_sum_[k * D + j] = static_cast<float>(g * embed_sum_[k * D + j] + (1 - g) * sums[k * D + j]);
  }
  refresh_from_ema();
  ++updates_;

  for (int64_t k = 0; k < K; ++k) idle_[k] = counts[k] > 0 ? 0 : idle_[k] + 1;
  if (opts_.dead_after <= 0 || n == 0) return;
  Rng rng = make_rng(seed_ ^ 0xDEADC0DEULL, static_cast<uint64_t>(updates_));
  for (int64_t k = 0; k < K; ++k) {
    if (idle_[k] < opts_.dead_after) continue;
    const float* src = z + static_cast<int64_t>(uniform_index(rng, static_cast<uint64_t>(n))) * D;
    // The revived entry carries unit mass so it survives the next refresh.
    cluster_size_[k] = 1.f;
    for (int64_t j = 0; j < D; ++j) embed_sum_[k * D + j] = src[j];
    idle_[k] = 0;
  }
  refresh_from_ema();
}

void Codebook::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + "embeddings", embed_);
  ck.put(prefix + "ema_cluster_size", cluster_size_);
  ck.put(prefix + "ema_embed_sum", embed_sum_);
  ck.put_ints(prefix + "idle", idle_);
  ck.put_ints(prefix + "state", {opts_.codes, opts_.dim, updates_, initialized_ ? 1 : 0, static_cast<int64_t>(seed_),
                                 opts_.dead_after});
  ck.put_ints(prefix + "hyper", {std::bit_cast<int64_t>(opts_.decay), std::bit_cast<int64_t>(opts_.epsilon)});
}

void Codebook::load(const Checkpoint& ck, const std::string& prefix) {
  const auto& st = ck.get_ints(prefix + "state");
  if (st.size() != 6) throw std::runtime_error("checkpoint: malformed codebook state");
  opts_.codes = st[0];
  opts_.dim = st[1];
  updates_ = st[2];
  initialized_ = st[3] != 0;
  seed_ = static_cast<uint64_t>(st[4]);
  opts_.dead_after = st[5];
  const auto& hyper = ck.get_ints(prefix + "hyper");
  if (hyper.size() != 2) throw std::runtime_error("checkpoint: malformed codebook hyperparameters");
  opts_.decay = std::bit_cast<double>(hyper[0]);
  opts_.epsilon = std::bit_cast<double>(hyper[1]);
  embed_ = ck.get(prefix + "embeddings");
  cluster_size_ = ck.get(prefix + "ema_cluster_size");
  embed_sum_ = ck.get(prefix + "ema_embed_sum");
  idle_ = ck.get_ints(prefix + "idle");
  if (embed_.shape() != Shape{opts_.codes, opts_.dim} || cluster_size_.size() != opts_.codes ||
      embed_sum_.shape() != embed_.shape() || static_cast<int64_t>(idle_.size()) != opts_.codes)
    throw std::runtime_error("checkpoint: codebook arrays disagree with K=" + std::to_string(opts_.codes) +
                             ", n_z=" + std::to_string(opts_.dim));
}

UsageStats usage_stats(const std::vector<int64_t>& idx, int64_t codes) {
  UsageStats s;
  s.counts.assign(static_cast<size_t>(codes), 0);
  for (int64_t k : idx) {
    if (k < 0 || k >= codes) throw std::out_of_range("usage_stats: invalid index " + std::to_string(k));
    ++s.counts[k];
  }
  double h = 0;
  const double n = static_cast<double>(idx.size());
  for (int64_t c : s.counts)
    if (c > 0) h -= (c / n) * std::log(c / n);
  s.perplexity = idx.empty() ? 0.0 : std::exp(h);
  return s;
}

template <typename T>
ag::Var<T> codebook_loss(const ag::Var<T>& z, const Tensor<T>& zq, T beta) {
  require_same_shape(z.shape(), zq.shape(), "codebook_loss");
  if (z.value().rank() != 2) throw std::invalid_argument("codebook_loss expects [positions, n_z]");
  const T dim = static_cast<T>(z.shape()[1]);
  ag::Var<T> target(zq, false);
  // Per-position squared norms: mean over elements times n_z.
  auto commit = ops::scale(ops::mean_sq_diff(z, target), beta * dim);
  T first;
  {
    ag::NoGradGuard ng;
    first = ops::mean_sq_diff(z.detach(), target).item() * dim;
  }
  return ops::add_scalar(commit, first);
}

template ag::Var<float> codebook_loss(const ag::Var<float>&, const Tensor<float>&, float);
template ag::Var<double> codebook_loss(const ag::Var<double>&, const Tensor<double>&, double);

}  // namespace vq3d
