#pragma once

// Data-parallel inner loops used by convolution, matmul and sample
// aggregation. Every kernel has a scalar reference implementation and
// optional vector variants (AVX2+FMA on x86-64, NEON on AArch64). The
// variant is picked once at startup from the CPU's capabilities and can be
// pinned with the UQDEPTH_SIMD environment variable ("scalar", "avx2",
// "neon").
//
// Element-wise kernels (axpy, axpy4, accumulate_sq_dev) are bit-identical
// across variants: every lane evaluates the same fused multiply-add chain
// as the scalar loop. Reductions (dot) reassociate and agree to rounding.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace uqd::simd {

struct KernelTable {
  std::string_view name;
  // y[i] = fma(a, x[i], y[i])
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y[i] = fma(a3, x3[i], fma(a2, x2[i], fma(a1, x1[i], fma(a0, x0[i], y[i]))))
  void (*axpy4)(const double* a, const double* const* x, double* y, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // acc[i] = fma(d, d, acc[i]) with d = x[i] - mean[i]
  void (*accumulate_sq_dev)(const double* x, const double* mean, double* acc, std::size_t n);
};

const KernelTable& scalar_kernels();

// Variants compiled into this binary whose ISA the running CPU supports,
// scalar first.
std::vector<const KernelTable*> available_kernels();

// Kernel table in use. Selected on first call.
const KernelTable& active_kernels();

// Pins the active table by name; returns false if that variant is not
// available on this machine.
bool select_kernels(std::string_view name);

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active_kernels().axpy(a, x.data(), y.data(), y.size());
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active_kernels().dot(x.data(), y.data(), x.size());
}

inline void accumulate_sq_dev(std::span<const double> x, std::span<const double> mean,
                              std::span<double> acc) {
  active_kernels().accumulate_sq_dev(x.data(), mean.data(), acc.data(), acc.size());
}

}  // namespace uqd::simd
