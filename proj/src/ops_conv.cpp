#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "vq3d/kernels/kernels.hpp"
#include "vq3d/ops.hpp"

namespace vq3d::ops {

using ag::input_grad;
using ag::make_result;
using ag::Node;

ConvGeometry ConvGeometry::cube(int64_t k, int64_t stride, int64_t pad_lo, int64_t pad_hi) {
  ConvGeometry g;
  g.kernel = {k, k, k};
  g.stride = {stride, stride, stride};
  g.pad_lo = {pad_lo, pad_lo, pad_lo};
  g.pad_hi = {pad_hi, pad_hi, pad_hi};
  return g;
}

ConvGeometry ConvGeometry::cube_same(int64_t k) { return cube(k, 1, (k - 1) / 2, k / 2); }

ConvGeometry ConvGeometry::planar(int64_t k, int64_t stride, int64_t pad) {
  ConvGeometry g;
  g.kernel = {1, k, k};
  g.stride = {1, stride, stride};
  g.pad_lo = {0, pad, pad};
  g.pad_hi = {0, pad, pad};
  return g;
}

std::array<int64_t, 3> ConvGeometry::output_extent(const std::array<int64_t, 3>& in) const {
  std::array<int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const int64_t span = in[a] + pad_lo[a] + pad_hi[a] - kernel[a];
    if (span < 0) throw std::invalid_argument("conv3d: kernel larger than padded input");
    out[a] = span / stride[a] + 1;
  }
  return out;
}

namespace {

struct ConvPlan {
  int64_t n, c, o;
  std::array<int64_t, 3> in, out;
  ConvGeometry g;
  int64_t ck() const { return c * g.kernel[0] * g.kernel[1] * g.kernel[2]; }
  int64_t in_vol() const { return in[0] * in[1] * in[2]; }
  int64_t out_vol() const { return out[0] * out[1] * out[2]; }
  int64_t tile() const { return std::max<int64_t>(256, std::min<int64_t>(out_vol(), (1 << 17) / std::max<int64_t>(1, ck()))); }
};

// Walks the output positions [p0, p1) of one tile as runs along the output
// W axis. For each run, fn(dst_offset, run, od, oh, ow0) is invoked.
template <typename F>
void for_each_run(const ConvPlan& pl, int64_t p0, int64_t p1, F&& fn) {
  const int64_t ow_n = pl.out[2], oh_n = pl.out[1];
  int64_t p = p0;
  while (p < p1) {
    const int64_t od = p / (oh_n * ow_n);
    const int64_t oh = (p / ow_n) % oh_n;
    const int64_t ow0 = p % ow_n;
    const int64_t run = std::min(ow_n - ow0, p1 - p);
    fn(p - p0, run, od, oh, ow0);
    p += run;
  }
}

// col[r, p - p0] for output positions [p0, p1) of one sample.
template <typename T>
void im2col_tile(const ConvPlan& pl, const T* x, int64_t p0, int64_t p1, T* col) {
  const int64_t pt = p1 - p0;
  const auto& g = pl.g;
  const int64_t sw = g.stride[2];
  int64_t row = 0;
  for (int64_t c = 0; c < pl.c; ++c) {
    const T* xc = x + c * pl.in_vol();
    for (int64_t kd = 0; kd < g.kernel[0]; ++kd)
      for (int64_t kh = 0; kh < g.kernel[1]; ++kh)
        for (int64_t kw = 0; kw < g.kernel[2]; ++kw, ++row) {
          T* dst_row = col + row * pt;
          for_each_run(pl, p0, p1, [&](int64_t off, int64_t run, int64_t od, int64_t oh, int64_t ow0) {
            T* dst = dst_row + off;
            const int64_t id = od * g.stride[0] - g.pad_lo[0] + kd;
            const int64_t ih = oh * g.stride[1] - g.pad_lo[1] + kh;
            if (id < 0 || id >= pl.in[0] || ih < 0 || ih >= pl.in[1]) {
              std::fill_n(dst, run, T{0});
              return;
            }
            const T* src = xc + (id * pl.in[1] + ih) * pl.in[2];
            const int64_t base = ow0 * sw - g.pad_lo[2] + kw;
            for (int64_t i = 0; i < run; ++i) {
              const int64_t iw = base + i * sw;
              dst[i] = (iw >= 0 && iw < pl.in[2]) ? src[iw] : T{0};
            }
          });
        }
  }
}

template <typename T>
void col2im_tile(const ConvPlan& pl, const T* col, int64_t p0, int64_t p1, T* dx) {
  const int64_t pt = p1 - p0;
  const auto& g = pl.g;
  const int64_t sw = g.stride[2];
  int64_t row = 0;
  for (int64_t c = 0; c < pl.c; ++c) {
    T* xc = dx + c * pl.in_vol();
    for (int64_t kd = 0; kd < g.kernel[0]; ++kd)
      for (int64_t kh = 0; kh < g.kernel[1]; ++kh)
        for (int64_t kw = 0; kw < g.kernel[2]; ++kw, ++row) {
          const T* src_row = col + row * pt;
          for_each_run(pl, p0, p1, [&](int64_t off, int64_t run, int64_t od, int64_t oh, int64_t ow0) {
            const int64_t id = od * g.stride[0] - g.pad_lo[0] + kd;
            const int64_t ih = oh * g.stride[1] - g.pad_lo[1] + kh;
            if (id < 0 || id >= pl.in[0] || ih < 0 || ih >= pl.in[1]) return;
            const T* src = src_row + off;
            T* dst = xc + (id * pl.in[1] + ih) * pl.in[2];
            const int64_t base = ow0 * sw - g.pad_lo[2] + kw;
            for (int64_t i = 0; i < run; ++i) {
              const int64_t iw = base + i * sw;
              if (iw >= 0 && iw < pl.in[2]) dst[iw] += src[i];
            }
          });
        }
  }
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ConvGeometry& geom) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5) throw std::invalid_argument("conv3d expects rank-5 input and weight");
  if (xs[1] != ws[1])
    throw std::invalid_argument("conv3d: input channels " + std::to_string(xs[1]) + " != weight channels " +
                                std::to_string(ws[1]));
  for (int a = 0; a < 3; ++a)
    if (ws[2 + a] != geom.kernel[a]) throw std::invalid_argument("conv3d: weight extent disagrees with geometry");

  ConvPlan pl{xs[0], xs[1], ws[0], {xs[2], xs[3], xs[4]}, {}, geom};
  pl.out = geom.output_extent(pl.in);
  const int64_t P = pl.out_vol();
  const int64_t CK = pl.ck();
  const int64_t tile = pl.tile();

  Tensor<T> out({pl.n, pl.o, pl.out[0], pl.out[1], pl.out[2]});
  std::vector<T> col(static_cast<size_t>(CK * tile));
  const T* wd = w.value().data();
  for (int64_t s = 0; s < pl.n; ++s) {
    const T* xs_ptr = x.value().data() + s * pl.c * pl.in_vol();
    T* ys = out.data() + s * pl.o * P;
    for (int64_t p0 = 0; p0 < P; p0 += tile) {
      const int64_t p1 = std::min(P, p0 + tile);
      im2col_tile(pl, xs_ptr, p0, p1, col.data());
      kernels::gemm(false, false, pl.o, p1 - p0, CK, wd, CK, col.data(), p1 - p0, ys + p0, P, false);
    }
    if (bias.defined()) {
      for (int64_t o = 0; o < pl.o; ++o) {
        const T b = bias.value()[o];
        T* yo = ys + o * P;
        for (int64_t p = 0; p < P; ++p) yo[p] += b;
      }
    }
  }

  std::vector<Var<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [pl](Node<T>& n) {
    const int64_t P = pl.out_vol();
    const int64_t CK = pl.ck();
    const int64_t tile = pl.tile();
    const auto& xv = n.inputs[0]->value;
    const auto& wv = n.inputs[1]->value;
    auto* gx = input_grad(n, 0);
    auto* gw = input_grad(n, 1);
    auto* gb = n.inputs.size() > 2 ? input_grad(n, 2) : nullptr;
    std::vector<T> col(static_cast<size_t>(CK * tile));
    for (int64_t s = 0; s < pl.n; ++s) {
      const T* dy = n.grad.data() + s * pl.o * P;
      if (gb) {
        for (int64_t o = 0; o < pl.o; ++o) {
          T acc{0};
          for (int64_t p = 0; p < P; ++p) acc += dy[o * P + p];
          (*gb)[o] += acc;
        }
      }
      for (int64_t p0 = 0; p0 < P; p0 += tile) {
        const int64_t p1 = std::min(P, p0 + tile);
        const int64_t pt = p1 - p0;
        if (gw) {
          im2col_tile(pl, xv.data() + s * pl.c * pl.in_vol(), p0, p1, col.data());
          kernels::gemm(false, true, pl.o, CK, pt, dy + p0, P, col.data(), pt, gw->data(), CK, true);
        }
        if (gx) {
          kernels::gemm(true, false, CK, pt, pl.o, wv.data(), CK, dy + p0, P, col.data(), pt, false);
          col2im_tile(pl, col.data(), p0, p1, gx->data() + s * pl.c * pl.in_vol());
        }
      }
    }
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int64_t f) {
  const auto& s = x.shape();
  if (s.size() != 5) throw std::invalid_argument("upsample_nearest expects rank 5");
  const int64_t nc = s[0] * s[1], D = s[2], H = s[3], W = s[4];
  Tensor<T> out({s[0], s[1], D * f, H * f, W * f});
  const T* src = x.value().data();
  T* dst = out.data();
  for (int64_t q = 0; q < nc; ++q)
    for (int64_t d = 0; d < D * f; ++d)
      for (int64_t h = 0; h < H * f; ++h) {
        const T* srow = src + ((q * D + d / f) * H + h / f) * W;
        T* drow = dst + ((q * D * f + d) * H * f + h) * W * f;
        for (int64_t w = 0; w < W * f; ++w) drow[w] = srow[w / f];
      }
  return make_result<T>(std::move(out), {x}, [nc, D, H, W, f](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (int64_t q = 0; q < nc; ++q)
      for (int64_t d = 0; d < D * f; ++d)
        for (int64_t h = 0; h < H * f; ++h) {
          T* srow = g->data() + ((q * D + d / f) * H + h / f) * W;
          const T* drow = n.grad.data() + ((q * D * f + d) * H * f + h) * W * f;
          for (int64_t w = 0; w < W * f; ++w) srow[w / f] += drow[w];
        }
  });
}

template <typename T>
Var<T> upsample_nearest_planar(const Var<T>& x, int64_t f) {
  const auto& s = x.shape();
  if (s.size() != 5) throw std::invalid_argument("upsample_nearest_planar expects rank 5");
  const int64_t nc = s[0] * s[1] * s[2], H = s[3], W = s[4];
  Tensor<T> out({s[0], s[1], s[2], H * f, W * f});
  for (int64_t q = 0; q < nc; ++q)
    for (int64_t h = 0; h < H * f; ++h)
      for (int64_t w = 0; w < W * f; ++w)
        out[(q * H * f + h) * W * f + w] = x.value()[(q * H + h / f) * W + w / f];
  return make_result<T>(std::move(out), {x}, [nc, H, W, f](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (int64_t q = 0; q < nc; ++q)
      for (int64_t h = 0; h < H * f; ++h)
        for (int64_t w = 0; w < W * f; ++w) (*g)[(q * H + h / f) * W + w / f] += n.grad[(q * H * f + h) * W * f + w];
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps) {
  const auto& s = x.shape();
  const int64_t N = s[0], C = s[1];
  const int64_t inner = x.size() / (N * C);
  const int64_t count = N * inner;
  std::vector<T> mu(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
  const auto& xv = x.value();
  for (int64_t c = 0; c < C; ++c) {
    if (training) {
      double m = 0;
      for (int64_t q = 0; q < N; ++q)
        for (int64_t i = 0; i < inner; ++i) m += xv[(q * C + c) * inner + i];
      m /= static_cast<double>(count);
      double v = 0;
      for (int64_t q = 0; q < N; ++q)
        for (int64_t i = 0; i < inner; ++i) {
          const double d = xv[(q * C + c) * inner + i] - m;
          v += d * d;
        }
      v /= static_cast<double>(count);
      mu[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + eps));
      const double unbiased = count > 1 ? v * count / (count - 1) : v;
      running_mean[c] = (T{1} - momentum) * running_mean[c] + momentum * static_cast<T>(m);
      running_var[c] = (T{1} - momentum) * running_var[c] + momentum * static_cast<T>(unbiased);
    } else {
      mu[c] = running_mean[c];
      inv_std[c] = T{1} / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor<T> xhat(s);
  Tensor<T> out(s);
  for (int64_t q = 0; q < N; ++q)
    for (int64_t c = 0; c < C; ++c) {
      const T gm = gamma.value()[c], bt = beta.value()[c];
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t k = (q * C + c) * inner + i;
        xhat[k] = (xv[k] - mu[c]) * inv_std[c];
        out[k] = gm * xhat[k] + bt;
      }
    }
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [xhat = std::move(xhat), inv_std, N, C, inner, training](Node<T>& n) {
                          const auto& gm = n.inputs[1]->value;
                          auto* gx = input_grad(n, 0);
                          auto* gg = input_grad(n, 1);
                          auto* gbt = input_grad(n, 2);
                          const T cnt = static_cast<T>(N * inner);
                          for (int64_t c = 0; c < C; ++c) {
                            T sum_dy{0}, sum_dy_xhat{0};
                            for (int64_t q = 0; q < N; ++q)
                              for (int64_t i = 0; i < inner; ++i) {
                                const int64_t k = (q * C + c) * inner + i;
                                sum_dy += n.grad[k];
                                sum_dy_xhat += n.grad[k] * xhat[k];
                              }
                            if (gg) (*gg)[c] += sum_dy_xhat;
                            if (gbt) (*gbt)[c] += sum_dy;
                            if (!gx) continue;
                            const T scale_c = gm[c] * inv_std[c];
                            for (int64_t q = 0; q < N; ++q)
                              for (int64_t i = 0; i < inner; ++i) {
                                const int64_t k = (q * C + c) * inner + i;
                                if (training)
                                  (*gx)[k] += scale_c * (n.grad[k] - sum_dy / cnt - xhat[k] * sum_dy_xhat / cnt);
                                else
                                  (*gx)[k] += scale_c * n.grad[k];
                              }
                          }
                        });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& s = x.shape();
  const int64_t N = s[0], C = s[1];
  const int64_t inner = x.size() / (N * C);
  Tensor<T> out({N, C});
  for (int64_t q = 0; q < N * C; ++q) {
    T acc{0};
    for (int64_t i = 0; i < inner; ++i) acc += x.value()[q * inner + i];
    out[q] = acc / static_cast<T>(inner);
  }
  return make_result<T>(std::move(out), {x}, [N, C, inner](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (int64_t q = 0; q < N * C; ++q) {
      const T v = n.grad[q] / static_cast<T>(inner);
      for (int64_t i = 0; i < inner; ++i) (*g)[q * inner + i] += v;
    }
  });
}

template <typename T>
Var<T> to_channels_last(const Var<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 5) throw std::invalid_argument("to_channels_last expects rank 5");
  const int64_t N = s[0], C = s[1], S = s[2] * s[3] * s[4];
  Tensor<T> out({N * S, C});
  for (int64_t q = 0; q < N; ++q)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < S; ++i) out[(q * S + i) * C + c] = x.value()[(q * C + c) * S + i];
  return make_result<T>(std::move(out), {x}, [N, C, S](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (int64_t q = 0; q < N; ++q)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < S; ++i) (*g)[(q * C + c) * S + i] += n.grad[(q * S + i) * C + c];
  });
}

template <typename T>
Var<T> from_channels_last(const Var<T>& x, int64_t N, int64_t D, int64_t H, int64_t W) {
  const int64_t S = D * H * W;
  if (x.shape().size() != 2 || x.shape()[0] != N * S)
    throw std::invalid_argument("from_channels_last: expected [" + std::to_string(N * S) + ",C], got " +
                                shape_str(x.shape()));
  const int64_t C = x.shape()[1];
  Tensor<T> out({N, C, D, H, W});
  for (int64_t q = 0; q < N; ++q)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < S; ++i) out[(q * C + c) * S + i] = x.value()[(q * S + i) * C + c];
  return make_result<T>(std::move(out), {x}, [N, C, S](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (int64_t q = 0; q < N; ++q)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < S; ++i) (*g)[(q * S + i) * C + c] += n.grad[(q * C + c) * S + i];
  });
}

namespace {

// Maps (sample, slice index, a, b) to the flat voxel offset in [N,1,D,H,W].
struct SliceMap {
  int64_t D, H, W;
  Plane plane;
  int64_t extent_a() const { return plane == Plane::sagittal ? H : D; }
  int64_t extent_b() const { return plane == Plane::axial ? H : W; }
  int64_t count() const { return plane == Plane::axial ? W : (plane == Plane::coronal ? H : D); }
  int64_t offset(int64_t q, int64_t i, int64_t a, int64_t b) const {
    const int64_t base = q * D * H * W;
    switch (plane) {
      case Plane::axial: return base + (a * H + b) * W + i;
      case Plane::coronal: return base + (a * H + i) * W + b;
      case Plane::sagittal: return base + (i * H + a) * W + b;
    }
    return 0;
  }
};

}  // namespace

template <typename T>
Var<T> extract_slices(const Var<T>& x, Plane plane, const std::vector<std::vector<int64_t>>& indices,
                      int64_t channels) {
  const auto& s = x.shape();
  if (s.size() != 5 || s[1] != 1) throw std::invalid_argument("extract_slices expects [N,1,D,H,W]");
  if (static_cast<int64_t>(indices.size()) != s[0]) throw std::invalid_argument("extract_slices: one index list per sample");
  const SliceMap map{s[2], s[3], s[4], plane};
  const int64_t k = indices.empty() ? 0 : static_cast<int64_t>(indices[0].size());
  for (const auto& row : indices) {
    if (static_cast<int64_t>(row.size()) != k) throw std::invalid_argument("extract_slices: ragged index lists");
    for (int64_t i : row)
      if (i < 0 || i >= map.count()) throw std::out_of_range("extract_slices: slice index out of range");
  }
  const int64_t A = map.extent_a(), B = map.extent_b();
  Tensor<T> out({s[0] * k, channels, 1, A, B});
  for (int64_t q = 0; q < s[0]; ++q)
    for (int64_t j = 0; j < k; ++j)
      for (int64_t ch = 0; ch < channels; ++ch) {
        T* dst = out.data() + ((q * k + j) * channels + ch) * A * B;
        for (int64_t a = 0; a < A; ++a)
          for (int64_t b = 0; b < B; ++b) dst[a * B + b] = x.value()[map.offset(q, indices[q][j], a, b)];
      }
  return make_result<T>(std::move(out), {x}, [map, indices, k, channels, A, B](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    for (size_t q = 0; q < indices.size(); ++q)
      for (int64_t j = 0; j < k; ++j)
        for (int64_t ch = 0; ch < channels; ++ch) {
          const T* src = n.grad.data() + ((static_cast<int64_t>(q) * k + j) * channels + ch) * A * B;
          for (int64_t a = 0; a < A; ++a)
            for (int64_t b = 0; b < B; ++b) (*g)[map.offset(static_cast<int64_t>(q), indices[q][j], a, b)] += src[a * B + b];
        }
  });
}

template <typename T>
Var<T> gradient_3d_loss(const Var<T>& x, const Var<T>& y) {
  require_same_shape(x.shape(), y.shape(), "gradient_3d_loss");
  const auto& s = x.shape();
  if (s.size() != 5 || s[1] != 1) throw std::invalid_argument("gradient_3d_loss expects [N,1,D,H,W]");
  const int64_t N = s[0], D = s[2], H = s[3], W = s[4];
  const std::array<int64_t, 3> ext{D, H, W};
  const std::array<int64_t, 3> step{H * W, W, 1};

  // Each plane contributes the two in-plane axes; every spatial axis belongs
  // to exactly two planes, so the loss is 2 * sum_axis mean(diff along axis)^2.
  Tensor<T> diff(s);
  for (int64_t i = 0; i < diff.size(); ++i) diff[i] = x.value()[i] - y.value()[i];
  std::array<T, 3> inv_count{};
  T total{0};
  for (int ax = 0; ax < 3; ++ax) {
    if (ext[ax] < 2) continue;
    const int64_t cnt = N * D * H * W / ext[ax] * (ext[ax] - 1);
    inv_count[ax] = T{1} / static_cast<T>(cnt);
    T acc{0};
    for (int64_t q = 0; q < N; ++q)
      for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) {
            const std::array<int64_t, 3> pos{d, h, w};
            if (pos[ax] + 1 >= ext[ax]) continue;
            const int64_t k = q * D * H * W + d * H * W + h * W + w;
            const T g = diff[k + step[ax]] - diff[k];
            acc += g * g;
          }
    total += T{2} * acc * inv_count[ax];
  }
  return make_result<T>(Tensor<T>({1}, total), {x, y},
                        [diff = std::move(diff), inv_count, ext, step, N, D, H, W](Node<T>& n) {
                          Tensor<T> gd(diff.shape());
                          for (int ax = 0; ax < 3; ++ax) {
                            if (ext[ax] < 2) continue;
                            const T c = T{4} * inv_count[ax] * n.grad[0];
                            for (int64_t q = 0; q < N; ++q)
                              for (int64_t d = 0; d < D; ++d)
                                for (int64_t h = 0; h < H; ++h)
                                  for (int64_t w = 0; w < W; ++w) {
                                    const std::array<int64_t, 3> pos{d, h, w};
                                    if (pos[ax] + 1 >= ext[ax]) continue;
                                    const int64_t k = q * D * H * W + d * H * W + h * W + w;
                                    const T g = c * (diff[k + step[ax]] - diff[k]);
                                    gd[k + step[ax]] += g;
                                    gd[k] -= g;
                                  }
                          }
                          if (auto* gx = input_grad(n, 0)) kernels::axpy(gx->size(), T{1}, gd.data(), gx->data());
                          if (auto* gy = input_grad(n, 1)) kernels::axpy(gy->size(), T{-1}, gd.data(), gy->data());
                        });
}

#define VQ3D_INSTANTIATE(T)                                                                                     \
  template Var<T> conv3d(const Var<T>&, const Var<T>&, const Var<T>&, const ConvGeometry&);                    \
  template Var<T> upsample_nearest(const Var<T>&, int64_t);                                                     \
  template Var<T> upsample_nearest_planar(const Var<T>&, int64_t);                                              \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, bool, T, T); \
  template Var<T> global_avg_pool(const Var<T>&);                                                               \
  template Var<T> to_channels_last(const Var<T>&);                                                              \
  template Var<T> from_channels_last(const Var<T>&, int64_t, int64_t, int64_t, int64_t);                        \
  template Var<T> extract_slices(const Var<T>&, Plane, const std::vector<std::vector<int64_t>>&, int64_t);      \
  template Var<T> gradient_3d_loss(const Var<T>&, const Var<T>&);

VQ3D_INSTANTIATE(float)
VQ3D_INSTANTIATE(double)
#undef VQ3D_INSTANTIATE

}  // namespace vq3d::ops
