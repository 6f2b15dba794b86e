#include <cstdlib>
#include <cstring>

#include "fedclust/kernels/cpu_features.hpp"
#include "fedclust/kernels/kernels.hpp"

namespace fedclust::kern {

namespace {

const Ops* select() {
  const char* env = std::getenv("FEDCLUST_BACKEND");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return &scalar_ops();
    if (std::strcmp(env, "avx2") == 0) return &avx2_ops();
  }
  const auto& f = CpuFeatures::get();
  if (f.avx2 && f.fma) return &avx2_ops();
  return &scalar_ops();
}

}  // namespace

const Ops& ops() {
  static const Ops* table = select();
  return *table;
}

const char* active_backend() { return ops().name; }

}  // namespace fedclust::kern
