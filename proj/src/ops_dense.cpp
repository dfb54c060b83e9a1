#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vq3d/kernels/kernels.hpp"
#include "vq3d/ops.hpp"

namespace vq3d::ops {

using ag::input_grad;
using ag::make_result;
using ag::Node;

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw std::invalid_argument("linear: " + shape_str(xs) + " x " + shape_str(ws));
  const int64_t M = xs[0], in = xs[1], out_f = ws[0];
  Tensor<T> out({M, out_f});
  kernels::gemm(false, true, M, out_f, in, x.value().data(), in, w.value().data(), in, out.data(), out_f, false);
  if (bias.defined())
    for (int64_t i = 0; i < M; ++i) kernels::axpy(out_f, T{1}, bias.value().data(), out.data() + i * out_f);
  std::vector<Var<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [M, in, out_f](Node<T>& n) {
    const auto& xv = n.inputs[0]->value;
    const auto& wv = n.inputs[1]->value;
    if (auto* gx = input_grad(n, 0))
      kernels::gemm(false, false, M, in, out_f, n.grad.data(), out_f, wv.data(), in, gx->data(), in, true);
    if (auto* gw = input_grad(n, 1))
      kernels::gemm(true, false, out_f, in, M, n.grad.data(), out_f, xv.data(), in, gw->data(), in, true);
    if (n.inputs.size() > 2)
      if (auto* gb = input_grad(n, 2))
        for (int64_t i = 0; i < M; ++i) kernels::axpy(out_f, T{1}, n.grad.data() + i * out_f, gb->data());
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto& s = x.shape();
  const int64_t D = s.back();
  const int64_t M = x.size() / D;
  Tensor<T> xhat(s), out(s);
  std::vector<T> inv_std(static_cast<size_t>(M));
  for (int64_t i = 0; i < M; ++i) {
    const T* row = x.value().data() + i * D;
    T m{0};
    for (int64_t j = 0; j < D; ++j) m += row[j];
    m /= static_cast<T>(D);
    T v{0};
    for (int64_t j = 0; j < D; ++j) v += (row[j] - m) * (row[j] - m);
    v /= static_cast<T>(D);
    inv_std[i] = T{1} / std::sqrt(v + eps);
    for (int64_t j = 0; j < D; ++j) {
      xhat[i * D + j] = (row[j] - m) * inv_std[i];
      out[i * D + j] = gamma.value()[j] * xhat[i * D + j] + beta.value()[j];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), inv_std, M, D](Node<T>& n) {
    const auto& gm = n.inputs[1]->value;
    auto* gx = input_grad(n, 0);
    auto* gg = input_grad(n, 1);
    auto* gb = input_grad(n, 2);
    std::vector<T> dxhat(static_cast<size_t>(D));
    for (int64_t i = 0; i < M; ++i) {
      const T* dy = n.grad.data() + i * D;
      const T* xh = xhat.data() + i * D;
      T s1{0}, s2{0};
      for (int64_t j = 0; j < D; ++j) {
        if (gg) (*gg)[j] += dy[j] * xh[j];
        if (gb) (*gb)[j] += dy[j];
        dxhat[j] = dy[j] * gm[j];
        s1 += dxhat[j];
        s2 += dxhat[j] * xh[j];
      }
      if (!gx) continue;
      const T invd = T{1} / static_cast<T>(D);
      for (int64_t j = 0; j < D; ++j) (*gx)[i * D + j] += inv_std[i] * (dxhat[j] - s1 * invd - xh[j] * s2 * invd);
    }
  });
}

template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int64_t>& ids) {
  const int64_t V = table.shape()[0], D = table.shape()[1];
  Tensor<T> out({static_cast<int64_t>(ids.size()), D});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= V) throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(table.value().data() + ids[i] * D, D, out.data() + static_cast<int64_t>(i) * D);
  }
  return make_result<T>(std::move(out), {table}, [ids, D](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (size_t i = 0; i < ids.size(); ++i)
      kernels::axpy(D, T{1}, n.grad.data() + static_cast<int64_t>(i) * D, g->data() + ids[i] * D);
  });
}

template <typename T>
Var<T> causal_attention(const Var<T>& qkv, int64_t heads) {
  const auto& s = qkv.shape();
  if (s.size() != 3 || s[2] % 3 != 0) throw std::invalid_argument("causal_attention expects [B,S,3D]");
  const int64_t B = s[0], S = s[1], D = s[2] / 3;
  if (D % heads != 0) throw std::invalid_argument("causal_attention: model dim not divisible by heads");
  const int64_t dh = D / heads;
  const int64_t ld = 3 * D;
  const T scale_f = T{1} / std::sqrt(static_cast<T>(dh));

  Tensor<T> probs({B, heads, S, S});
  Tensor<T> out({B, S, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h) {
      const T* q = qkv.value().data() + b * S * ld + h * dh;
      const T* k = q + D;
      const T* v = q + 2 * D;
      T* p = probs.data() + (b * heads + h) * S * S;
      kernels::gemm(false, true, S, S, dh, q, ld, k, ld, p, S, false);
      for (int64_t i = 0; i < S; ++i) {
        T* row = p + i * S;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t j = 0; j <= i; ++j) {
          row[j] *= scale_f;
          mx = std::max(mx, row[j]);
        }
        T z{0};
        for (int64_t j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (int64_t j = 0; j <= i; ++j) row[j] /= z;
        for (int64_t j = i + 1; j < S; ++j) row[j] = T{0};
      }
      kernels::gemm(false, false, S, dh, S, p, S, v, ld, out.data() + b * S * D + h * dh, D, false);
    }

  return make_result<T>(std::move(out), {qkv}, [probs = std::move(probs), B, S, D, heads, dh, ld, scale_f](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    const auto& x = n.inputs[0]->value;
    std::vector<T> dp(static_cast<size_t>(S * S));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < heads; ++h) {
        const T* q = x.data() + b * S * ld + h * dh;
        const T* k = q + D;
        const T* v = q + 2 * D;
        T* gq = g->data() + b * S * ld + h * dh;
        T* gk = gq + D;
        T* gv = gq + 2 * D;
        const T* p = probs.data() + (b * heads + h) * S * S;
        const T* dout = n.grad.data() + b * S * D + h * dh;
        // dV = P^T dO ; dP = dO V^T
        kernels::gemm(true, false, S, dh, S, p, S, dout, D, gv, ld, true);
        kernels::gemm(false, true, S, S, dh, dout, D, v, ld, dp.data(), S, false);
        for (int64_t i = 0; i < S; ++i) {
          T* row = dp.data() + i * S;
          const T* prow = p + i * S;
          T dotp{0};
          for (int64_t j = 0; j <= i; ++j) dotp += row[j] * prow[j];
          for (int64_t j = 0; j <= i; ++j) row[j] = prow[j] * (row[j] - dotp) * scale_f;
          for (int64_t j = i + 1; j < S; ++j) row[j] = T{0};
        }
        // dQ = dS K ; dK = dS^T Q
        kernels::gemm(false, false, S, dh, S, dp.data(), S, k, ld, gq, ld, true);
        kernels::gemm(true, false, S, dh, S, dp.data(), S, q, ld, gk, ld, true);
      }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const int64_t K = x.shape().back();
  const int64_t M = x.size() / K;
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < M; ++i) {
    const T* r = x.value().data() + i * K;
    T* o = out.data() + i * K;
    const T mx = *std::max_element(r, r + K);
    T z{0};
    for (int64_t j = 0; j < K; ++j) z += (o[j] = std::exp(r[j] - mx));
    for (int64_t j = 0; j < K; ++j) o[j] /= z;
  }
  return make_result<T>(std::move(out), {x}, [M, K](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (int64_t i = 0; i < M; ++i) {
      const T* y = n.value.data() + i * K;
      const T* dy = n.grad.data() + i * K;
      T d{0};
      for (int64_t j = 0; j < K; ++j) d += y[j] * dy[j];
      for (int64_t j = 0; j < K; ++j) (*g)[i * K + j] += y[j] * (dy[j] - d);
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x) {
  const int64_t K = x.shape().back();
  const int64_t M = x.size() / K;
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < M; ++i) {
    const T* r = x.value().data() + i * K;
    const T mx = *std::max_element(r, r + K);
    T z{0};
    for (int64_t j = 0; j < K; ++j) z += std::exp(r[j] - mx);
    const T lz = mx + std::log(z);
    for (int64_t j = 0; j < K; ++j) out[i * K + j] = r[j] - lz;
  }
  return make_result<T>(std::move(out), {x}, [M, K](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (int64_t i = 0; i < M; ++i) {
      const T* y = n.value.data() + i * K;
      const T* dy = n.grad.data() + i * K;
      T s{0};
      for (int64_t j = 0; j < K; ++j) s += dy[j];
      for (int64_t j = 0; j < K; ++j) (*g)[i * K + j] += dy[j] - std::exp(y[j]) * s;
    }
  });
}

template <typename T>
Var<T> weighted_cross_entropy(const Var<T>& logits, const std::vector<int64_t>& targets, const std::vector<T>& weights) {
  const int64_t K = logits.shape().back();
  const int64_t M = logits.size() / K;
  if (static_cast<int64_t>(targets.size()) != M || static_cast<int64_t>(weights.size()) != M)
    throw std::invalid_argument("weighted_cross_entropy: targets/weights must have one entry per row");
  T wsum{0};
  for (T w : weights) wsum += w;
  Tensor<T> logp(logits.shape());
  T total{0};
  for (int64_t i = 0; i < M; ++i) {
    const T* r = logits.value().data() + i * K;
    const T mx = *std::max_element(r, r + K);
    T z{0};
    for (int64_t j = 0; j < K; ++j) z += std::exp(r[j] - mx);
    const T lz = mx + std::log(z);
    for (int64_t j = 0; j < K; ++j) logp[i * K + j] = r[j] - lz;
    if (weights[i] != T{0}) {
      if (targets[i] < 0 || targets[i] >= K) throw std::out_of_range("weighted_cross_entropy: target out of range");
      total -= weights[i] * logp[i * K + targets[i]];
    }
  }
  const T value = wsum > T{0} ? total / wsum : T{0};
  return make_result<T>(Tensor<T>({1}, value), {logits},
                        [logp = std::move(logp), targets, weights, wsum, M, K](Node<T>& n) {
                          auto* g = input_grad(n, 0);
                          if (!g || wsum <= T{0}) return;
                          for (int64_t i = 0; i < M; ++i) {
                            if (weights[i] == T{0}) continue;
                            const T c = n.grad[0] * weights[i] / wsum;
                            for (int64_t j = 0; j < K; ++j) (*g)[i * K + j] += c * std::exp(logp[i * K + j]);
                            (*g)[i * K + targets[i]] -= c;
                          }
                        });
}

template <typename T>
Var<T> focal_loss(const Var<T>& probs, const std::vector<int64_t>& labels, T gamma, const std::vector<T>& alpha) {
  const int64_t K = probs.shape().back();
  const int64_t M = probs.size() / K;
  if (static_cast<int64_t>(labels.size()) != M) throw std::invalid_argument("focal_loss: one label per row");
  if (static_cast<int64_t>(alpha.size()) != K) throw std::invalid_argument("focal_loss: one weight per class");
  T total{0};
  for (int64_t i = 0; i < M; ++i) {
    const T p = probs.value()[i * K + labels[i]];
    total += -alpha[labels[i]] * std::pow(T{1} - p, gamma) * std::log(p);
  }
  return make_result<T>(Tensor<T>({1}, total / static_cast<T>(M)), {probs}, [labels, gamma, alpha, M, K](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (int64_t i = 0; i < M; ++i) {
      const T p = n.inputs[0]->value[i * K + labels[i]];
      const T a = alpha[labels[i]];
      const T one_m = T{1} - p;
      // d/dp [-a (1-p)^g log p] = a [g (1-p)^(g-1) log p - (1-p)^g / p]
      T d = -a * std::pow(one_m, gamma) / p;
      if (gamma != T{0}) d += a * gamma * std::pow(one_m, gamma - T{1}) * std::log(p);
      (*g)[i * K + labels[i]] += n.grad[0] * d / static_cast<T>(M);
    }
  });
}

#define VQ3D_INSTANTIATE(T)                                                                             \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                  \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                           \
  template Var<T> embedding(const Var<T>&, const std::vector<int64_t>&);                                \
  template Var<T> causal_attention(const Var<T>&, int64_t);                                             \
  template Var<T> softmax(const Var<T>&);                                                               \
  template Var<T> log_softmax(const Var<T>&);                                                           \
  template Var<T> weighted_cross_entropy(const Var<T>&, const std::vector<int64_t>&, const std::vector<T>&); \
  template Var<T> focal_loss(const Var<T>&, const std::vector<int64_t>&, T, const std::vector<T>&);

VQ3D_INSTANTIATE(float)
VQ3D_INSTANTIATE(double)
#undef VQ3D_INSTANTIATE

}  // namespace vq3d::ops
