#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qsmp/simd.hpp"

namespace qsmp {
namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& e : v) e = g(rng);
  return v;
}

#if QSMP_HAVE_AVX2_KERNELS
TEST(Simd, Avx2MatchesScalar) {
  if (!simd::isa_available(simd::Isa::avx2)) GTEST_SKIP() << "no AVX2 on this CPU";
  // Lengths around the vector width and unroll factors exercise the tails.
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 31u, 1000u, 2049u}) {
    const auto a = random_vector(n, n + 1), b = random_vector(n, n + 2);
    const double tol = 1e-12 * (1.0 + n);
    EXPECT_NEAR(simd::avx2::dot(a.data(), b.data(), n), simd::scalar::dot(a.data(), b.data(), n), tol) << n;
    EXPECT_NEAR(simd::avx2::sum(a.data(), n), simd::scalar::sum(a.data(), n), tol) << n;
    std::vector<double> y1 = b, y2 = b, o1(n), o2(n);
    simd::avx2::axpy(0.7, a.data(), y1.data(), n);
    simd::scalar::axpy(0.7, a.data(), y2.data(), n);
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(y1[j], y2[j], 1e-15 * (1.0 + std::abs(y2[j])));
    simd::avx2::multiply(a.data(), b.data(), o1.data(), n);
    simd::scalar::multiply(a.data(), b.data(), o2.data(), n);
    EXPECT_EQ(o1, o2);
    simd::avx2::scale(-1.5, a.data(), o1.data(), n);
    simd::scalar::scale(-1.5, a.data(), o2.data(), n);
    EXPECT_EQ(o1, o2);
  }
}
#endif

TEST(Simd, DispatchFollowsTheForcedIsa) {
  const simd::Isa saved = simd::active_isa();
  simd::force_isa(simd::Isa::scalar);
  EXPECT_EQ(simd::active_isa(), simd::Isa::scalar);
  EXPECT_EQ(simd::isa_name(simd::Isa::scalar), "scalar");
  const auto a = random_vector(100, 1), b = random_vector(100, 2);
  EXPECT_EQ(simd::dot(a, b), simd::scalar::dot(a.data(), b.data(), 100));
  std::vector<double> out(100);
  simd::multiply(a, b, out);
  simd::multiply(out, b, out);  // aliasing is allowed
  for (std::size_t j = 0; j < 100; ++j) EXPECT_EQ(out[j], a[j] * b[j] * b[j]);
  if (!simd::isa_available(simd::Isa::avx2)) EXPECT_ANY_THROW(simd::force_isa(simd::Isa::avx2));
  simd::force_isa(saved);
}

}  // namespace
}  // namespace qsmp
