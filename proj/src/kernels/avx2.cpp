// AVX2 + FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be entered after a runtime CPU check.

#include <immintrin.h>

#include "vq3d/kernels/kernels.hpp"

namespace vq3d::kernels::avx2 {

namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr int width = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V broadcast(T x) { return _mm256_set1_ps(x); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr int width = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V broadcast(T x) { return _mm256_set1_pd(x); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

// Rows x (2 * width) register tile, accumulated over the full k extent.
template <typename S, int Rows>
inline void tile_2v(int64_t k, const typename S::T* a, int64_t lda, const typename S::T* b, int64_t ldb,
                    typename S::T* c, int64_t ldc) {
  using V = typename S::V;
  V acc0[Rows];
  V acc1[Rows];
  for (int r = 0; r < Rows; ++r) {
    acc0[r] = S::zero();
    acc1[r] = S::zero();
  }
  for (int64_t p = 0; p < k; ++p) {
    const V b0 = S::load(b + p * ldb);
    const V b1 = S::load(b + p * ldb + S::width);
    for (int r = 0; r < Rows; ++r) {
      const V av = S::broadcast(a[r * lda + p]);
      acc0[r] = S::fmadd(av, b0, acc0[r]);
      acc1[r] = S::fmadd(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < Rows; ++r) {
    typename S::T* crow = c + r * ldc;
    S::store(crow, S::add(S::load(crow), acc0[r]));
    S::store(crow + S::width, S::add(S::load(crow + S::width), acc1[r]));
  }
}

template <typename S, int Rows>
inline void tile_1v(int64_t k, const typename S::T* a, int64_t lda, const typename S::T* b, int64_t ldb,
                    typename S::T* c, int64_t ldc) {
  using V = typename S::V;
  V acc[Rows];
  for (int r = 0; r < Rows; ++r) acc[r] = S::zero();
  for (int64_t p = 0; p < k; ++p) {
    const V b0 = S::load(b + p * ldb);
    for (int r = 0; r < Rows; ++r) acc[r] = S::fmadd(S::broadcast(a[r * lda + p]), b0, acc[r]);
  }
  for (int r = 0; r < Rows; ++r) {
    typename S::T* crow = c + r * ldc;
    S::store(crow, S::add(S::load(crow), acc[r]));
  }
}

template <typename S, int Rows>
inline void row_block(int64_t n, int64_t k, const typename S::T* a, int64_t lda, const typename S::T* b,
                      int64_t ldb, typename S::T* c, int64_t ldc) {
  constexpr int64_t w = S::width;
  int64_t j = 0;
  for (; j + 2 * w <= n; j += 2 * w) tile_2v<S, Rows>(k, a, lda, b + j, ldb, c + j, ldc);
  for (; j + w <= n; j += w) tile_1v<S, Rows>(k, a, lda, b + j, ldb, c + j, ldc);
  for (; j < n; ++j) {
    for (int r = 0; r < Rows; ++r) {
      typename S::T acc{0};
      for (int64_t p = 0; p < k; ++p) acc += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] += acc;
    }
  }
}

template <typename S>
void gemm_nn_impl(int64_t m, int64_t n, int64_t k, const typename S::T* a, int64_t lda, const typename S::T* b,
                  int64_t ldb, typename S::T* c, int64_t ldc) {
  // Column panels keep the B strip resident in cache while every row block
  // sweeps over it.
  constexpr int64_t panel = 256;
  for (int64_t j0 = 0; j0 < n; j0 += panel) {
    const int64_t nb = (n - j0 < panel) ? n - j0 : panel;
    int64_t i = 0;
    for (; i + 4 <= m; i += 4) row_block<S, 4>(nb, k, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc);
    switch (m - i) {
      case 3: row_block<S, 3>(nb, k, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc); break;
      case 2: row_block<S, 2>(nb, k, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc); break;
      case 1: row_block<S, 1>(nb, k, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc); break;
      default: break;
    }
  }
}

template <typename S>
typename S::T dot_impl(const typename S::T* a, const typename S::T* b, int64_t n) {
  constexpr int64_t w = S::width;
  auto acc0 = S::zero();
  auto acc1 = S::zero();
  int64_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    acc0 = S::fmadd(S::load(a + i), S::load(b + i), acc0);
    acc1 = S::fmadd(S::load(a + i + w), S::load(b + i + w), acc1);
  }
  for (; i + w <= n; i += w) acc0 = S::fmadd(S::load(a + i), S::load(b + i), acc0);
  typename S::T s = S::hsum(S::add(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename S>
typename S::T squared_distance_impl(const typename S::T* a, const typename S::T* b, int64_t n) {
  constexpr int64_t w = S::width;
  auto acc0 = S::zero();
  auto acc1 = S::zero();
  int64_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    const auto d0 = S::sub(S::load(a + i), S::load(b + i));
    const auto d1 = S::sub(S::load(a + i + w), S::load(b + i + w));
    acc0 = S::fmadd(d0, d0, acc0);
    acc1 = S::fmadd(d1, d1, acc1);
  }
  for (; i + w <= n; i += w) {
    const auto d = S::sub(S::load(a + i), S::load(b + i));
    acc0 = S::fmadd(d, d, acc0);
  }
  typename S::T s = S::hsum(S::add(acc0, acc1));
  for (; i < n; ++i) {
    const auto d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

template <typename S>
void axpy_impl(int64_t n, typename S::T alpha, const typename S::T* x, typename S::T* y) {
  constexpr int64_t w = S::width;
  const auto av = S::broadcast(alpha);
  int64_t i = 0;
  for (; i + w <= n; i += w) S::store(y + i, S::fmadd(av, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void gemm_nn(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b, int64_t ldb,
             float* c, int64_t ldc) {
  gemm_nn_impl<F32>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b, int64_t ldb,
             double* c, int64_t ldc) {
  gemm_nn_impl<F64>(m, n, k, a, lda, b, ldb, c, ldc);
}
float dot(const float* a, const float* b, int64_t n) { return dot_impl<F32>(a, b, n); }
double dot(const double* a, const double* b, int64_t n) { return dot_impl<F64>(a, b, n); }
float squared_distance(const float* a, const float* b, int64_t n) { return squared_distance_impl<F32>(a, b, n); }
double squared_distance(const double* a, const double* b, int64_t n) {
  return squared_distance_impl<F64>(a, b, n);
}
void axpy(int64_t n, float alpha, const float* x, float* y) { axpy_impl<F32>(n, alpha, x, y); }
void axpy(int64_t n, double alpha, const double* x, double* y) { axpy_impl<F64>(n, alpha, x, y); }

}  // namespace vq3d::kernels::avx2
