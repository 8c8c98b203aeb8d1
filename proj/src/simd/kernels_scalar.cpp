#include <cmath>

#include "uqdepth/simd.hpp"
#include "kernels_impl.hpp"

namespace uqd::simd::detail {

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void axpy4_scalar(const double* a, const double* const* x, double* y, std::size_t n) {
  const double* x0 = x[0];
  const double* x1 = x[1];
  const double* x2 = x[2];
  const double* x3 = x[3];
  for (std::size_t i = 0; i < n; ++i) {
    double acc = std::fma(a[0], x0[i], y[i]);
    acc = std::fma(a[1], x1[i], acc);
    acc = std::fma(a[2], x2[i], acc);
    y[i] = std::fma(a[3], x3[i], acc);
  }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

void accumulate_sq_dev_scalar(const double* x, const double* mean, double* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean[i];
    acc[i] = std::fma(d, d, acc[i]);
  }
}

}  // namespace uqd::simd::detail
