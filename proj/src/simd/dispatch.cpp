#include <cstdlib>
#include <mutex>
#include <string>

#include "uqdepth/simd.hpp"
#include "kernels_impl.hpp"

namespace uqd::simd {
namespace {

constexpr KernelTable kScalar{"scalar", &detail::axpy_scalar, &detail::axpy4_scalar,
                              &detail::dot_scalar, &detail::accumulate_sq_dev_scalar};

#if defined(UQD_HAVE_AVX2)
constexpr KernelTable kAvx2{"avx2", &detail::axpy_avx2, &detail::axpy4_avx2, &detail::dot_avx2,
                            &detail::accumulate_sq_dev_avx2};

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

#if defined(UQD_HAVE_NEON)
constexpr KernelTable kNeon{"neon", &detail::axpy_neon, &detail::axpy4_neon, &detail::dot_neon,
                            &detail::accumulate_sq_dev_neon};
#endif

const KernelTable* g_active = nullptr;
std::once_flag g_init;

void init_active() {
  const auto tables = available_kernels();
  g_active = tables.back();
  if (const char* env = std::getenv("UQDEPTH_SIMD")) {
    for (const KernelTable* t : tables) {
      if (t->name == env) g_active = t;
    }
  }
}

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

std::vector<const KernelTable*> available_kernels() {
  std::vector<const KernelTable*> out{&kScalar};
#if defined(UQD_HAVE_AVX2)
  if (cpu_has_avx2()) out.push_back(&kAvx2);
#endif
#if defined(UQD_HAVE_NEON)
  out.push_back(&kNeon);
#endif
  return out;
}

const KernelTable& active_kernels() {
  std::call_once(g_init, init_active);
  return *g_active;
}

bool select_kernels(std::string_view name) {
  std::call_once(g_init, init_active);
  for (const KernelTable* t : available_kernels()) {
    if (t->name == name) {
      g_active = t;
      return true;
    }
  }
  return false;
}

}  // namespace uqd::simd
