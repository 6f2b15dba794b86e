#include "fedclust/kernels/cpu_features.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <cpuid.h>
#define FEDCLUST_X86 1
#else
#define FEDCLUST_X86 0
#endif

namespace fedclust::kern {

namespace {

CpuFeatures detect() {
  CpuFeatures f;
#if FEDCLUST_X86
  unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
  if (__get_cpuid(1, &eax, &ebx, &ecx, &edx)) {
    f.fma = (ecx & (1u << 12)) != 0;
  }
  if (__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) {
    f.avx2 = (ebx & (1u << 5)) != 0;
  }
#endif
  return f;
}

}  // namespace

const CpuFeatures& CpuFeatures::get() {
  static const CpuFeatures f = detect();
  return f;
}

}  // namespace fedclust::kern
