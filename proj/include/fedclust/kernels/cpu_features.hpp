#pragma once

namespace fedclust::kern {

struct CpuFeatures {
  bool avx2 = false;
  bool fma = false;

  static const CpuFeatures& get();
};

}  // namespace fedclust::kern
