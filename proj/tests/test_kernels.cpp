#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "vq3d/kernels/kernels.hpp"
#include "vq3d/random.hpp"

namespace vq3d::kernels {
namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(uniform(rng, -1.0, 1.0));
  return v;
}

// Naive triple loop in long double; independent of both kernel variants.
template <typename T>
std::vector<T> naive_gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const std::vector<T>& a, int64_t lda,
                          const std::vector<T>& b, int64_t ldb) {
  std::vector<T> c(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      long double acc = 0;
      for (int64_t p = 0; p < k; ++p) {
        const T av = ta ? a[p * lda + i] : a[i * lda + p];
        const T bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += static_cast<long double>(av) * bv;
      }
      c[i * n + j] = static_cast<T>(acc);
    }
  return c;
}

class IsaGuard {
 public:
  explicit IsaGuard(Isa isa) : prev_(active_isa()) { set_isa(isa); }
  ~IsaGuard() { set_isa(prev_); }

 private:
  Isa prev_;
};

template <typename T>
void check_gemm_all_layouts(Isa isa, double tol) {
  IsaGuard guard(isa);
  Rng rng = make_rng(7);
  const int64_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 16, 9}, {17, 33, 65}, {5, 300, 40}, {64, 15, 128}, {2, 257, 3}};
  for (const auto& s : shapes) {
    const int64_t m = s[0], n = s[1], k = s[2];
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        const int64_t lda = ta ? m + 2 : k + 1;
        const int64_t ldb = tb ? k + 3 : n + 1;
        auto a = random_vec<T>(rng, static_cast<size_t>((ta ? k : m) * lda));
        auto b = random_vec<T>(rng, static_cast<size_t>((tb ? n : k) * ldb));
        const auto want = naive_gemm<T>(ta, tb, m, n, k, a, lda, b, ldb);
        std::vector<T> c(static_cast<size_t>(m * n), T(0.5));
        gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c.data(), n, true);
        for (size_t i = 0; i < c.size(); ++i) ASSERT_NEAR(c[i], want[i] + T(0.5), tol * (1 + k)) << "m=" << m << " n=" << n << " k=" << k;
        gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c.data(), n, false);
        for (size_t i = 0; i < c.size(); ++i) ASSERT_NEAR(c[i], want[i], tol * (1 + k));
      }
  }
}

TEST(Kernels, ScalarGemmMatchesNaive) {
  check_gemm_all_layouts<float>(Isa::scalar, 1e-6);
  check_gemm_all_layouts<double>(Isa::scalar, 1e-13);
}

TEST(Kernels, Avx2GemmMatchesNaive) {
  if (detected_isa() != Isa::avx2) GTEST_SKIP() << "AVX2 not available";
  check_gemm_all_layouts<float>(Isa::avx2, 1e-6);
  check_gemm_all_layouts<double>(Isa::avx2, 1e-13);
}

#if defined(VQ3D_HAVE_AVX2)
TEST(Kernels, Avx2VectorKernelsMatchReference) {
  if (detected_isa() != Isa::avx2) GTEST_SKIP() << "AVX2 not available";
  Rng rng = make_rng(11);
  for (int64_t n : {0, 1, 7, 8, 15, 16, 17, 31, 64, 1000}) {
    auto a = random_vec<float>(rng, static_cast<size_t>(n));
    auto b = random_vec<float>(rng, static_cast<size_t>(n));
    EXPECT_NEAR(avx2::dot(a.data(), b.data(), n), reference::dot(a.data(), b.data(), n), 1e-5 * (1 + n));
    EXPECT_NEAR(avx2::squared_distance(a.data(), b.data(), n), reference::squared_distance(a.data(), b.data(), n),
                1e-5 * (1 + n));
    auto y1 = b, y2 = b;
    avx2::axpy(n, 0.3f, a.data(), y1.data());
    reference::axpy(n, 0.3f, a.data(), y2.data());
    for (int64_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-6);

    auto ad = random_vec<double>(rng, static_cast<size_t>(n));
    auto bd = random_vec<double>(rng, static_cast<size_t>(n));
    EXPECT_NEAR(avx2::dot(ad.data(), bd.data(), n), reference::dot(ad.data(), bd.data(), n), 1e-12 * (1 + n));
    EXPECT_NEAR(avx2::squared_distance(ad.data(), bd.data(), n), reference::squared_distance(ad.data(), bd.data(), n),
                1e-12 * (1 + n));
  }
}
#endif

TEST(Kernels, SetIsaFallsBackWhenUnsupported) {
  IsaGuard guard(Isa::avx2);
  EXPECT_EQ(active_isa(), detected_isa());
  set_isa(Isa::scalar);
  EXPECT_EQ(active_isa(), Isa::scalar);
}

}  // namespace
}  // namespace vq3d::kernels
