#pragma once

// Dense inner-loop kernels shared by the tensor ops and the quantizer.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2/FMA variant. The public entry points dispatch at runtime on the
// detected instruction set; set VQ3D_SIMD=scalar in the environment (or call
// set_isa) to force the reference path.

#include <cstdint>
#include <string_view>

namespace vq3d::kernels {

enum class Isa { scalar, avx2 };

/// Best instruction set supported by this CPU and this build.
Isa detected_isa();
/// Instruction set currently used by the dispatching entry points.
Isa active_isa();
/// Overrides the active instruction set. Requesting an unsupported ISA falls
/// back to scalar.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

// C[M,N] (+)= op(A) * op(B), all row-major with explicit leading dimensions.
// op(A) is M x K, op(B) is K x N. When accumulate is false C is overwritten.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
          const float* b, int64_t ldb, float* c, int64_t ldc, bool accumulate);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
          const double* b, int64_t ldb, double* c, int64_t ldc, bool accumulate);

float dot(const float* a, const float* b, int64_t n);
double dot(const double* a, const double* b, int64_t n);

float squared_distance(const float* a, const float* b, int64_t n);
double squared_distance(const double* a, const double* b, int64_t n);

// y += alpha * x
void axpy(int64_t n, float alpha, const float* x, float* y);
void axpy(int64_t n, double alpha, const double* x, double* y);

// Per-ISA implementations. The gemm variants here only handle the plain
// non-transposed accumulate case; transposition is resolved by packing in
// the dispatcher.
namespace reference {
void gemm_nn(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b, int64_t ldb,
             float* c, int64_t ldc);
void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b, int64_t ldb,
             double* c, int64_t ldc);
float dot(const float* a, const float* b, int64_t n);
double dot(const double* a, const double* b, int64_t n);
float squared_distance(const float* a, const float* b, int64_t n);
double squared_distance(const double* a, const double* b, int64_t n);
void axpy(int64_t n, float alpha, const float* x, float* y);
void axpy(int64_t n, double alpha, const double* x, double* y);
}  // namespace reference

#if defined(VQ3D_HAVE_AVX2)
namespace avx2 {
void gemm_nn(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b, int64_t ldb,
             float* c, int64_t ldc);
void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda, const double* b, int64_t ldb,
             double* c, int64_t ldc);
float dot(const float* a, const float* b, int64_t n);
double dot(const double* a, const double* b, int64_t n);
float squared_distance(const float* a, const float* b, int64_t n);
double squared_distance(const double* a, const double* b, int64_t n);
void axpy(int64_t n, float alpha, const float* x, float* y);
void axpy(int64_t n, double alpha, const double* x, double* y);
}  // namespace avx2
#endif

}  // namespace vq3d::kernels
