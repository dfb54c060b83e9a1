#include "vq3d/kernels/kernels.hpp"

namespace vq3d::kernels::reference {

namespace {

template <typename T>
void gemm_nn_impl(int64_t m, int64_t n, int64_t k, const T* a, int64_t lda, const T* b, int64_t ldb, T* c,
                  int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    for (int64_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      if (av == T{0}) continue;
      const T* brow = b + p * ldb;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T dot_impl(const T* a, const T* b, int64_t n) {
  T acc{0};
  for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T squared_distance_impl(const T* a, const T* b, int64_t n) {
  T acc{0};
  for (int64_t i = 0; i < n; ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

template <typename T>
void axpy_impl(int64_t n, T alpha, const T* x, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void gemm_nn(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b, int64_t ldb,
             float* c, int64_t ldc) {
  gemm_nn_impl(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b, int64_t ldb,
             double* c, int64_t ldc) {
  gemm_nn_impl(m, n, k, a, lda, b, ldb, c, ldc);
}
float dot(const float* a, const float* b, int64_t n) { return dot_impl(a, b, n); }
double dot(const double* a, const double* b, int64_t n) { return dot_impl(a, b, n); }
float squared_distance(const float* a, const float* b, int64_t n) { return squared_distance_impl(a, b, n); }
double squared_distance(const double* a, const double* b, int64_t n) { return squared_distance_impl(a, b, n); }
void axpy(int64_t n, float alpha, const float* x, float* y) { axpy_impl(n, alpha, x, y); }
void axpy(int64_t n, double alpha, const double* x, double* y) { axpy_impl(n, alpha, x, y); }

}  // namespace vq3d::kernels::reference
