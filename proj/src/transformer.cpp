#include "vq3d/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vq3d {

using ag::Var;

std::vector<int64_t> linearize(const TokenGrid& g) {
  if (static_cast<int64_t>(g.idx.size()) != g.size())
    throw std::invalid_argument("linearize: grid holds " + std::to_string(g.idx.size()) + " indices for " +
                                std::to_string(g.d) + "x" + std::to_string(g.h) + "x" + std::to_string(g.w));
  return g.idx;
}

TokenGrid delinearize(const std::vector<int64_t>& seq, int64_t d, int64_t h, int64_t w) {
  if (static_cast<int64_t>(seq.size()) != d * h * w)
    throw std::invalid_argument("delinearize: sequence length " + std::to_string(seq.size()) + " != " +
                                std::to_string(d * h * w));
  return TokenGrid{d, h, w, seq};
}

int64_t MaskSpec::masked_count() const { return std::count(keep.begin(), keep.end(), uint8_t{0}); }

int64_t mask_count(double ratio, int64_t length) {
  return static_cast<int64_t>(std::floor(ratio * static_cast<double>(length) + 0.5));
}

std::pair<std::vector<int64_t>, MaskSpec> apply_mask(const std::vector<int64_t>& seq, double ratio, uint64_t seed,
                                                     int64_t codes) {
  if (!(ratio >= 0 && ratio <= 1)) throw std::invalid_argument("mask ratio must lie in [0, 1]");
  if (codes < 1) throw std::invalid_argument("apply_mask: need at least one code");
  const int64_t S = static_cast<int64_t>(seq.size());
  MaskSpec m;
  m.ratio = ratio;
  m.seed = seed;
  m.keep.assign(seq.size(), 1);
  auto out = seq;
  Rng rng = make_rng(seed, 0x3A5C);
  for (int64_t p : sample_without_replacement(rng, S, mask_count(ratio, S))) {
    m.keep[p] = 0;
    if (codes == 1) continue;
    // Uniform over the other K - 1 codes, so every masked token changes.
    int64_t r = static_cast<int64_t>(uniform_index(rng, static_cast<uint64_t>(codes - 1)));
    if (r >= seq[p]) ++r;
    out[p] = r;
  }
  return {out, m};
}

void TransformerConfig::validate() const {
  if (layers < 1 || heads < 1 || model_dim < 1 || codes < 2 || seq_len < 1)
    throw std::invalid_argument("transformer hyperparameters must be positive");
  if (model_dim % heads != 0)
    throw std::invalid_argument("model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
                                std::to_string(heads));
}

std::string TransformerConfig::str() const {
  std::ostringstream os;
  os << "layers=" << layers << " heads=" << heads << " model_dim=" << model_dim << " codes=" << codes
     << " seq_len=" << seq_len;
  return os.str();
}

template <typename T>
TransformerBlock<T>::TransformerBlock(int64_t dim, int64_t heads, int64_t layers, Rng& rng)
    : dim_(dim),
      heads_(heads),
      ln1_(dim),
      ln2_(dim),
      qkv_(dim, 3 * dim, rng),
      // Residual projections shrink with depth (GPT-2 style).
      proj_(dim, dim, rng, true, 1.0 / std::sqrt(2.0 * static_cast<double>(layers))),
      fc1_(dim, 4 * dim, rng, true, std::sqrt(2.0)),
      fc2_(4 * dim, dim, rng, true, 1.0 / std::sqrt(2.0 * static_cast<double>(layers))) {
  this->register_module("ln1", ln1_);
  this->register_module("ln2", ln2_);
  this->register_module("qkv", qkv_);
  this->register_module("proj", proj_);
  this->register_module("fc1", fc1_);
  this->register_module("fc2", fc2_);
}

template <typename T>
Var<T> TransformerBlock<T>::forward(const Var<T>& x, int64_t batch, int64_t len) {
  auto qkv = ops::reshape(qkv_.forward(ln1_.forward(x)), {batch, len, 3 * dim_});
  auto att = ops::reshape(ops::causal_attention(qkv, heads_), {batch * len, dim_});
  auto h = ops::add(x, proj_.forward(att));
  auto m = fc2_.forward(ops::gelu(fc1_.forward(ln2_.forward(h))));
  return ops::add(h, m);
}

template <typename T>
MaskedTransformer<T>::MaskedTransformer(const TransformerConfig& cfg, Rng& rng)
    : cfg_(cfg),
      tok_(cfg.codes + 1, cfg.model_dim, rng),
      pos_(cfg.seq_len + 1, cfg.model_dim, rng),
      ln_f_(cfg.model_dim),
      head_(cfg.model_dim, cfg.codes, rng, true, 1.0) {
  cfg.validate();
  this->register_module("tok_emb", tok_);
  this->register_module("pos_emb", pos_);
  for (int64_t l = 0; l < cfg.layers; ++l) {
    blocks_.push_back(std::make_unique<TransformerBlock<T>>(cfg.model_dim, cfg.heads, cfg.layers, rng));
    this->register_module("block" + std::to_string(l), *blocks_.back());
  }
  this->register_module("ln_f", ln_f_);
  this->register_module("head", head_);
}

template <typename T>
Var<T> MaskedTransformer<T>::forward_logits(const std::vector<std::vector<int64_t>>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("forward_logits: empty batch");
  const int64_t B = static_cast<int64_t>(seqs.size());
  const int64_t L = static_cast<int64_t>(seqs[0].size());
  if (L < 1 || L > cfg_.seq_len)
    throw std::invalid_argument("forward_logits: length " + std::to_string(L) + " outside [1, " +
                                std::to_string(cfg_.seq_len) + "]");
  std::vector<int64_t> ids, pos;
  ids.reserve(static_cast<size_t>(B * L));
  for (const auto& s : seqs) {
    if (static_cast<int64_t>(s.size()) != L) throw std::invalid_argument("forward_logits: ragged batch");
    ids.push_back(start_token());
    for (int64_t i = 0; i + 1 < L; ++i) {
      if (s[i] < 0 || s[i] >= cfg_.codes) throw std::out_of_range("forward_logits: token " + std::to_string(s[i]));
      ids.push_back(s[i]);
    }
    for (int64_t i = 0; i < L; ++i) pos.push_back(i);
  }
  auto h = ops::add(tok_.forward(ids), pos_.forward(pos));
  for (auto& b : blocks_) h = b->forward(h, B, L);
  return head_.forward(ln_f_.forward(h));
}

template <typename T>
Var<T> masked_ce_loss(const Var<T>& logits, const std::vector<int64_t>& targets, const std::vector<uint8_t>& keep) {
  if (targets.size() != keep.size() || static_cast<int64_t>(targets.size()) != logits.shape()[0])
    throw std::invalid_argument("masked_ce_loss: logits, targets and mask disagree in length");
  std::vector<T> w(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) w[i] = keep[i] ? T(0) : T(1);
  return ops::weighted_cross_entropy(logits, targets, w);
}

int64_t sample_from_logits(const float* logits, int64_t k, const SamplingOptions& opts, Rng& rng) {
  if (opts.temperature <= 0) return std::max_element(logits, logits + k) - logits;
  std::vector<int64_t> order(static_cast<size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  int64_t keep = (opts.top_k <= 0 || opts.top_k >= k) ? k : opts.top_k;
  if (keep < k)
    std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                      [&](int64_t a, int64_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
  double mx = -INFINITY;
  for (int64_t i = 0; i < keep; ++i) mx = std::max(mx, static_cast<double>(logits[order[i]]));
  std::vector<double> p(static_cast<size_t>(keep));
  double z = 0;
  for (int64_t i = 0; i < keep; ++i) z += p[i] = std::exp((logits[order[i]] - mx) / opts.temperature);
  double u = uniform01(rng) * z;
  for (int64_t i = 0; i < keep; ++i) {
    u -= p[i];
    if (u < 0) return order[i];
  }
  // Rounding left u marginally non-negative: take the last positive-mass entry.
  for (int64_t i = keep - 1; i >= 0; --i)
    if (p[i] > 0) return order[i];
  return order[0];
}

std::vector<int64_t> sample_sequence(MaskedTransformer<float>& model, uint64_t seed, const SamplingOptions& opts) {
  ag::NoGradGuard ng;
  const auto& cfg = model.config();
  Rng rng = make_rng(seed, 0x5A3B);
  std::vector<int64_t> seq{static_cast<int64_t>(uniform_index(rng, static_cast<uint64_t>(cfg.codes)))};
  while (static_cast<int64_t>(seq.size()) < cfg.seq_len) {
    auto probe = seq;
    probe.push_back(0);  // placeholder; position L-1 sees only seq
    auto logits = model.forward_logits({probe});
    const float* last = logits.value().data() + (static_cast<int64_t>(probe.size()) - 1) * cfg.codes;
    seq.push_back(sample_from_logits(last, cfg.codes, opts, rng));
  }
  return seq;
}

TokenGrid sample_tokens(MaskedTransformer<float>& model, int64_t edge, uint64_t seed, const SamplingOptions& opts) {
  if (edge * edge * edge != model.config().seq_len)
    throw std::invalid_argument("sample_tokens: latent edge " + std::to_string(edge) + " does not match sequence length " +
                                std::to_string(model.config().seq_len));
  return delinearize(sample_sequence(model, seed, opts), edge, edge, edge);
}

template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class MaskedTransformer<float>;
template class MaskedTransformer<double>;
template Var<float> masked_ce_loss(const Var<float>&, const std::vector<int64_t>&, const std::vector<uint8_t>&);
template Var<double> masked_ce_loss(const Var<double>&, const std::vector<int64_t>&, const std::vector<uint8_t>&);

}  // namespace vq3d
