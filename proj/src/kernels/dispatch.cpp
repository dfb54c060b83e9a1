#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "vq3d/kernels/kernels.hpp"

namespace vq3d::kernels {

namespace {

Isa probe_isa() {
#if defined(VQ3D_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
  return Isa::scalar;
}

Isa initial_isa() {
  const Isa best = probe_isa();
  if (const char* env = std::getenv("VQ3D_SIMD")) {
    if (std::string(env) == "scalar") return Isa::scalar;
  }
  return best;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[2];
  return buffers[slot];
}

template <typename T>
void transpose_into(std::vector<T>& out, const T* src, int64_t rows, int64_t cols, int64_t ld) {
  // src is rows x cols (leading dimension ld); out becomes cols x rows.
  out.resize(static_cast<size_t>(rows * cols));
  constexpr int64_t blk = 32;
  for (int64_t r0 = 0; r0 < rows; r0 += blk) {
    const int64_t r1 = std::min(rows, r0 + blk);
    for (int64_t c0 = 0; c0 < cols; c0 += blk) {
      const int64_t c1 = std::min(cols, c0 + blk);
      for (int64_t r = r0; r < r1; ++r)
        for (int64_t c = c0; c < c1; ++c) out[static_cast<size_t>(c * rows + r)] = src[r * ld + c];
    }
  }
}

template <typename T>
void gemm_nn_dispatch(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b, int64_t ldb, T* c,
                      int64_t ldc) {
#if defined(VQ3D_HAVE_AVX2)
  if (active().load(std::memory_order_relaxed) == Isa::avx2) {
    avx2::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
    return;
  }
#endif
  reference::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}

template <typename T>
T dot_dispatch(const T* a, const T* b, int64_t n) {
#if defined(VQ3D_HAVE_AVX2)
  if (active().load(std::memory_order_relaxed) == Isa::avx2) return avx2::dot(a, b, n);
#endif
  return reference::dot(a, b, n);
}

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b,
               int64_t ldb, T* c, int64_t ldc, bool accumulate) {
  if (!accumulate) {
    for (int64_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, sizeof(T) * static_cast<size_t>(n));
  }
  if (m == 0 || n == 0 || k == 0) return;

  const T* a_rm = a;
  int64_t a_ld = lda;
  if (trans_a) {
    auto& buf = scratch<T>(0);
    transpose_into(buf, a, k, m, lda);
    a_rm = buf.data();
    a_ld = k;
  }

  if (trans_b && n < 16) {
    // Narrow outputs: every entry is a dot product of two contiguous rows.
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) c[i * ldc + j] += dot_dispatch(a_rm + i * a_ld, b + j * ldb, k);
    return;
  }

  const T* b_rm = b;
  int64_t b_ld = ldb;
  if (trans_b) {
    auto& buf = scratch<T>(1);
    transpose_into(buf, b, n, k, ldb);
    b_rm = buf.data();
    b_ld = n;
  }
  gemm_nn_dispatch(m, n, k, a_rm, a_ld, b_rm, b_ld, c, ldc);
}

}  // namespace

Isa detected_isa() {
  static const Isa isa = probe_isa();
  return isa;
}

Isa active_isa() { return active().load(); }

void set_isa(Isa isa) { active().store(isa == Isa::avx2 && detected_isa() == Isa::avx2 ? Isa::avx2 : Isa::scalar); }

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
          int64_t ldb, float* c, int64_t ldc, bool accumulate) {
  gemm_impl(trans_a, trans_b, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
          const double* b, int64_t ldb, double* c, int64_t ldc, bool accumulate) {
  gemm_impl(trans_a, trans_b, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

float dot(const float* a, const float* b, int64_t n) { return dot_dispatch(a, b, n); }
double dot(const double* a, const double* b, int64_t n) { return dot_dispatch(a, b, n); }

float squared_distance(const float* a, const float* b, int64_t n) {
#if defined(VQ3D_HAVE_AVX2)
  if (active().load(std::memory_order_relaxed) == Isa::avx2) return avx2::squared_distance(a, b, n);
#endif
  return reference::squared_distance(a, b, n);
}
double squared_distance(const double* a, const double* b, int64_t n) {
#if defined(VQ3D_HAVE_AVX2)
  if (active().load(std::memory_order_relaxed) == Isa::avx2) return avx2::squared_distance(a, b, n);
#endif
  return reference::squared_distance(a, b, n);
}

void axpy(int64_t n, float alpha, const float* x, float* y) {
#if defined(VQ3D_HAVE_AVX2)
  if (active().load(std::memory_order_relaxed) == Isa::avx2) return avx2::axpy(n, alpha, x, y);
#endif
  reference::axpy(n, alpha, x, y);
}
void axpy(int64_t n, double alpha, const double* x, double* y) {
#if defined(VQ3D_HAVE_AVX2)
  if (active().load(std::memory_order_relaxed) == Isa::avx2) return avx2::axpy(n, alpha, x, y);
#endif
  reference::axpy(n, alpha, x, y);
}

}  // namespace vq3d::kernels
