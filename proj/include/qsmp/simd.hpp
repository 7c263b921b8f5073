#pragma once

// Vector kernels for the path-batch inner loops. Every kernel has a portable
// scalar reference implementation and, on x86-64, an AVX2+FMA variant; the
// variant is picked once at startup from the CPU feature flags. Setting
// QSMP_SIMD=scalar in the environment pins the reference kernels.

#include <cstddef>
#include <span>
#include <string_view>

namespace qsmp::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// True when the running CPU and the build both support the variant.
bool isa_available(Isa isa);

/// Variant currently used by the dispatching entry points.
Isa active_isa();

/// Overrides dispatch (tests and benchmarks). Throws if unavailable.
void force_isa(Isa isa);

// Dispatching entry points. Spans must have equal lengths.
double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
/// out = a * b elementwise; out may alias a or b.
void multiply(std::span<const double> a, std::span<const double> b, std::span<double> out);
/// out = alpha * a elementwise; out may alias a.
void scale(double alpha, std::span<const double> a, std::span<double> out);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void multiply(const double* a, const double* b, double* out, std::size_t n);
void scale(double alpha, const double* a, double* out, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define QSMP_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void multiply(const double* a, const double* b, double* out, std::size_t n);
void scale(double alpha, const double* a, double* out, std::size_t n);
}  // namespace avx2
#else
#define QSMP_HAVE_AVX2_KERNELS 0
#endif

}  // namespace qsmp::simd
