#include <atomic>

#include "tsvr/error.hpp"
#include "tsvr/simd.hpp"

namespace tsvr::simd {
namespace {

Isa best_isa() { return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{best_isa()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(TSVR_BUILD_AVX2)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& kernels_for(Isa isa) {
  if (!isa_supported(isa)) {
    throw Error("kernel ISA '" + std::string(isa_name(isa)) + "' is not supported on this CPU");
  }
#if defined(TSVR_BUILD_AVX2)
  if (isa == Isa::Avx2) return avx2_kernels();
#endif
  return scalar_kernels();
}

const KernelTable& kernels() { return kernels_for(active().load(std::memory_order_relaxed)); }

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  kernels_for(isa);
  active().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace tsvr::simd
