#include <atomic>
#include <cstdlib>
#include <string_view>

#include "variants.hpp"

namespace fedtt::kernels {
namespace {

const KernelTable* pick_default() {
  if (const char* env = std::getenv("FEDTT_KERNELS"); env && std::string_view(env) == "scalar")
    return &detail::kScalarTable;
  if (const KernelTable* t = avx2_table(); t && cpu_supports(Isa::avx2)) return t;
  return &detail::kScalarTable;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{pick_default()};
  return table;
}

}  // namespace

const KernelTable& scalar_table() { return detail::kScalarTable; }

const KernelTable* avx2_table() {
#if defined(FEDTT_HAVE_AVX2_TU)
  return &detail::kAvx2Table;
#else
  return nullptr;
#endif
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(__i386__)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

Isa active_isa() { return &active() == &detail::kScalarTable ? Isa::scalar : Isa::avx2; }

void force_isa(Isa isa) {
  if (isa == Isa::avx2) {
    const KernelTable* t = avx2_table();
    if (!t || !cpu_supports(Isa::avx2)) return;
    slot().store(t, std::memory_order_release);
  } else {
    slot().store(&detail::kScalarTable, std::memory_order_release);
  }
}

}  // namespace fedtt::kernels
