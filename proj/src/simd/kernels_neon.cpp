#include <arm_neon.h>

#include <cmath>

#include "kernels_impl.hpp"

namespace uqd::simd::detail {

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void axpy4_neon(const double* a, const double* const* x, double* y, std::size_t n) {
  const float64x2_t a0 = vdupq_n_f64(a[0]);
  const float64x2_t a1 = vdupq_n_f64(a[1]);
  const float64x2_t a2 = vdupq_n_f64(a[2]);
  const float64x2_t a3 = vdupq_n_f64(a[3]);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t acc = vld1q_f64(y + i);
    acc = vfmaq_f64(acc, a0, vld1q_f64(x[0] + i));
    acc = vfmaq_f64(acc, a1, vld1q_f64(x[1] + i));
    acc = vfmaq_f64(acc, a2, vld1q_f64(x[2] + i));
    acc = vfmaq_f64(acc, a3, vld1q_f64(x[3] + i));
    vst1q_f64(y + i, acc);
  }
  for (; i < n; ++i) {
    double acc = std::fma(a[0], x[0][i], y[i]);
    acc = std::fma(a[1], x[1][i], acc);
    acc = std::fma(a[2], x[2][i], acc);
    y[i] = std::fma(a[3], x[3][i], acc);
  }
}

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t s0 = vdupq_n_f64(0.0);
  float64x2_t s1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 = vfmaq_f64(s0, vld1q_f64(x + i), vld1q_f64(y + i));
    s1 = vfmaq_f64(s1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(s0, s1));
  for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

void accumulate_sq_dev_neon(const double* x, const double* mean, double* acc, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vsubq_f64(vld1q_f64(x + i), vld1q_f64(mean + i));
    vst1q_f64(acc + i, vfmaq_f64(vld1q_f64(acc + i), d, d));
  }
  for (; i < n; ++i) {
    const double d = x[i] - mean[i];
    acc[i] = std::fma(d, d, acc[i]);
  }
}

}  // namespace uqd::simd::detail
