#pragma once

#include <cstddef>

namespace uqd::simd::detail {

void axpy_scalar(double a, const double* x, double* y, std::size_t n);
void axpy4_scalar(const double* a, const double* const* x, double* y, std::size_t n);
double dot_scalar(const double* x, const double* y, std::size_t n);
void accumulate_sq_dev_scalar(const double* x, const double* mean, double* acc, std::size_t n);

#if defined(UQD_HAVE_AVX2)
void axpy_avx2(double a, const double* x, double* y, std::size_t n);
void axpy4_avx2(const double* a, const double* const* x, double* y, std::size_t n);
double dot_avx2(const double* x, const double* y, std::size_t n);
void accumulate_sq_dev_avx2(const double* x, const double* mean, double* acc, std::size_t n);
#endif

#if defined(UQD_HAVE_NEON)
void axpy_neon(double a, const double* x, double* y, std::size_t n);
void axpy4_neon(const double* a, const double* const* x, double* y, std::size_t n);
double dot_neon(const double* x, const double* y, std::size_t n);
void accumulate_sq_dev_neon(const double* x, const double* mean, double* acc, std::size_t n);
#endif

}  // namespace uqd::simd::detail
