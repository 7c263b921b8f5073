#include <cassert>
#include <cstdlib>
#include <cstring>

#include "qsmp/error.hpp"
#include "qsmp/simd.hpp"

namespace qsmp::simd {
namespace {

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*multiply)(const double*, const double*, double*, std::size_t);
  void (*scale)(double, const double*, double*, std::size_t);
};

constexpr KernelTable kScalar{scalar::dot, scalar::sum, scalar::axpy, scalar::multiply, scalar::scale};
#if QSMP_HAVE_AVX2_KERNELS
constexpr KernelTable kAvx2{avx2::dot, avx2::sum, avx2::axpy, avx2::multiply, avx2::scale};
#endif

Isa detect() {
  if (const char* env = std::getenv("QSMP_SIMD"); env && std::strcmp(env, "scalar") == 0) return Isa::scalar;
  return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

Isa g_isa = detect();

const KernelTable& table() {
#if QSMP_HAVE_AVX2_KERNELS
  if (g_isa == Isa::avx2) return kAvx2;
#endif
  return kScalar;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
  if (isa == Isa::scalar) return true;
#if QSMP_HAVE_AVX2_KERNELS
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return g_isa; }

void force_isa(Isa isa) {
  if (!isa_available(isa)) throw Error("SIMD variant not available: " + std::string(isa_name(isa)));
  g_isa = isa;
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return table().dot(a.data(), b.data(), a.size());
}

double sum(std::span<const double> a) { return table().sum(a.data(), a.size()); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  table().axpy(alpha, x.data(), y.data(), x.size());
}

void multiply(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  assert(a.size() == b.size() && a.size() == out.size());
  table().multiply(a.data(), b.data(), out.data(), a.size());
}

void scale(double alpha, std::span<const double> a, std::span<double> out) {
  assert(a.size() == out.size());
  table().scale(alpha, a.data(), out.data(), a.size());
}

}  // namespace qsmp::simd
