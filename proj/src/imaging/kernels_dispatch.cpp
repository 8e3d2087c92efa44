#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_internal.hpp"
#include "toolrl/kernels.hpp"

namespace toolrl::kernels {

namespace {

const KernelTable kScalar{Level::Scalar, detail::luma_scalar, detail::scharr_sq_scalar,
                          detail::normalize_scalar};

#if defined(TOOLRL_HAVE_AVX2)
const KernelTable kAvx2{Level::Avx2, detail::luma_avx2, detail::scharr_sq_avx2,
                        detail::normalize_avx2};
#endif

std::atomic<const KernelTable*> g_override{nullptr};

const KernelTable& select_default() {
  const char* env = std::getenv("TOOLRL_KERNELS");
  if (env != nullptr && std::string(env) == "scalar") return kScalar;
  if (const KernelTable* t = avx2_kernels()) return *t;
  return kScalar;
}

}  // namespace

std::string_view level_name(Level level) {
  switch (level) {
    case Level::Scalar:
      return "scalar";
    case Level::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool cpu_supports(Level level) {
  switch (level) {
    case Level::Scalar:
      return true;
    case Level::Avx2:
#if defined(TOOLRL_HAVE_AVX2)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& scalar_kernels() { return kScalar; }

const KernelTable* avx2_kernels() {
#if defined(TOOLRL_HAVE_AVX2)
  if (cpu_supports(Level::Avx2)) return &kAvx2;
#endif
  return nullptr;
}

const KernelTable& active() {
  if (const KernelTable* t = g_override.load()) return *t;
  static const KernelTable& chosen = select_default();
  return chosen;
}

void set_override(const KernelTable* table) { g_override.store(table); }

}  // namespace toolrl::kernels
