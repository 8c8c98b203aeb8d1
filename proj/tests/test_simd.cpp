#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "uqdepth/simd.hpp"

using namespace uqd;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-3, 3);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// Lengths straddling every vector width and remainder path.
const std::size_t kLengths[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 100, 1023};

}  // namespace

TEST(Simd, ScalarVariantAlwaysAvailable) {
  const auto tables = simd::available_kernels();
  ASSERT_FALSE(tables.empty());
  EXPECT_EQ(tables.front()->name, "scalar");
  EXPECT_TRUE(simd::select_kernels("scalar"));
  EXPECT_EQ(simd::active_kernels().name, "scalar");
  EXPECT_FALSE(simd::select_kernels("no-such-isa"));
}

TEST(Simd, ElementwiseKernelsBitIdentical) {
  const simd::KernelTable& ref = simd::scalar_kernels();
  std::mt19937_64 rng(1);
  for (const simd::KernelTable* k : simd::available_kernels()) {
    for (std::size_t n : kLengths) {
      const auto x = random_vec(n, rng), y0 = random_vec(n, rng), m = random_vec(n, rng);
      auto y_ref = y0, y_vec = y0;
      ref.axpy(0.37, x.data(), y_ref.data(), n);
      k->axpy(0.37, x.data(), y_vec.data(), n);
      EXPECT_EQ(y_ref, y_vec) << k->name << " axpy n=" << n;

      const auto x1 = random_vec(n, rng), x2 = random_vec(n, rng), x3 = random_vec(n, rng);
      const double a[4] = {0.5, -1.25, 2.0, 0.125};
      const double* xs[4] = {x.data(), x1.data(), x2.data(), x3.data()};
      y_ref = y0;
      y_vec = y0;
      ref.axpy4(a, xs, y_ref.data(), n);
      k->axpy4(a, xs, y_vec.data(), n);
      EXPECT_EQ(y_ref, y_vec) << k->name << " axpy4 n=" << n;

      y_ref = y0;
      y_vec = y0;
      ref.accumulate_sq_dev(x.data(), m.data(), y_ref.data(), n);
      k->accumulate_sq_dev(x.data(), m.data(), y_vec.data(), n);
      EXPECT_EQ(y_ref, y_vec) << k->name << " accumulate_sq_dev n=" << n;
    }
  }
}

TEST(Simd, DotAgreesToRounding) {
  const simd::KernelTable& ref = simd::scalar_kernels();
  std::mt19937_64 rng(2);
  for (const simd::KernelTable* k : simd::available_kernels()) {
    for (std::size_t n : kLengths) {
      const auto x = random_vec(n, rng), y = random_vec(n, rng);
      double abs_sum = 0;
      for (std::size_t i = 0; i < n; ++i) abs_sum += std::fabs(x[i] * y[i]);
      const double tol = 4.0 * double(n + 1) * 1.1102230246251565e-16 * abs_sum;
      EXPECT_NEAR(ref.dot(x.data(), y.data(), n), k->dot(x.data(), y.data(), n), tol) << k->name << " n=" << n;
    }
  }
}

TEST(Simd, ScalarReferenceMatchesDefinition) {
  const simd::KernelTable& ref = simd::scalar_kernels();
  std::vector<double> x{1, 2, 3}, y{10, 20, 30}, m{0.5, 0.5, 0.5};
  ref.axpy(2.0, x.data(), y.data(), 3);
  EXPECT_EQ(y, (std::vector<double>{12, 24, 36}));
  EXPECT_EQ(ref.dot(x.data(), x.data(), 3), 14.0);
  std::vector<double> acc{1, 1, 1};
  ref.accumulate_sq_dev(x.data(), m.data(), acc.data(), 3);
  EXPECT_EQ(acc, (std::vector<double>{1.25, 3.25, 7.25}));
}

TEST(Simd, SpanWrappersUseActiveTable) {
  for (const simd::KernelTable* k : simd::available_kernels()) {
    ASSERT_TRUE(simd::select_kernels(k->name));
    std::vector<double> x{1, 2, 3, 4, 5}, y(5, 1.0);
    simd::axpy(3.0, x, y);
    EXPECT_EQ(y, (std::vector<double>{4, 7, 10, 13, 16})) << k->name;
    EXPECT_EQ(simd::dot(x, x), 55.0) << k->name;
  }
}
