#include <algorithm>
#include <cmath>
#include <cstddef>

#include "fedclust/kernels/kernels.hpp"

// AVX2/FMA kernels. This translation unit is built with -mavx2 -mfma; the
// dispatcher only hands out this table after a CPUID check.

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace fedclust::kern {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swap = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swap));
}

// Inner update crow[0..n) += av * brow[0..n), the workhorse of both
// gemm_nn and gemm_tn.
inline void axpy_row(double* crow, double av, const double* brow,
                     std::size_t n) {
  const __m256d a = _mm256_set1_pd(av);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d c0 = _mm256_loadu_pd(crow + j);
    __m256d c1 = _mm256_loadu_pd(crow + j + 4);
    c0 = _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j), c0);
    c1 = _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j + 4), c1);
    _mm256_storeu_pd(crow + j, c0);
    _mm256_storeu_pd(crow + j + 4, c1);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = _mm256_loadu_pd(crow + j);
    c0 = _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j), c0);
    _mm256_storeu_pd(crow + j, c0);
  }
  for (; j < n; ++j) crow[j] += av * brow[j];
}

inline double dot_impl(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                           acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                           acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void gemm_nn_v(double* c, const double* a, const double* b, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      axpy_row(crow, a[i * k + p], b + p * n, n);
    }
  }
}

void gemm_nt_v(double* c, const double* a, const double* b, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double acc = dot_impl(arow, b + j * k, k);
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void gemm_tn_v(double* c, const double* a, const double* b, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      axpy_row(c + p * n, arow[p], brow, n);
    }
  }
}

void gemv_v(double* y, const double* a, const double* x, std::size_t m,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) y[i] = dot_impl(a + i * n, x, n);
}

double dot_v(const double* a, const double* b, std::size_t n) {
  return dot_impl(a, b, n);
}

double sumsq_v(const double* a, std::size_t n) { return dot_impl(a, a, n); }

double vsum_v(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

void axpy_v(double* y, double alpha, const double* x, std::size_t n) {
  axpy_row(y, alpha, x, n);
}

void scal_v(double* a, double alpha, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(a + i, _mm256_mul_pd(av, _mm256_loadu_pd(a + i)));
  }
  for (; i < n; ++i) a[i] *= alpha;
}

void vmul_v(double* dst, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void vsub_v(double* dst, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void relu_v(double* dst, const double* src, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_max_pd(zero, _mm256_loadu_pd(src + i)));
  }
  for (; i < n; ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
}

void relu_bwd_v(double* grad, const double* act, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(act + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(grad + i,
                     _mm256_and_pd(mask, _mm256_loadu_pd(grad + i)));
  }
  for (; i < n; ++i) {
    if (!(act[i] > 0.0)) grad[i] = 0.0;
  }
}

void adam_v(double* p, double* m, double* v, const double* g, std::size_t n,
            double lr, double beta1, double beta2, double eps, double b1c,
            double b2c) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d ob1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d ob2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vb1c = _mm256_set1_pd(b1c);
  const __m256d vb2c = _mm256_set1_pd(b2c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    __m256d mi = _mm256_loadu_pd(m + i);
    __m256d vi = _mm256_loadu_pd(v + i);
    mi = _mm256_fmadd_pd(ob1, gi, _mm256_mul_pd(b1, mi));
    vi = _mm256_fmadd_pd(ob2, _mm256_mul_pd(gi, gi), _mm256_mul_pd(b2, vi));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_div_pd(mi, vb1c);
    const __m256d vhat = _mm256_div_pd(vi, vb2c);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, mhat), denom);
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / b1c;
    const double vhat = v[i] / b2c;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

constexpr Ops kAvx2Ops = {
    gemm_nn_v, gemm_nt_v, gemm_tn_v, gemv_v, dot_v,      sumsq_v, vsum_v,
    axpy_v,    scal_v,    vmul_v,    vsub_v, relu_v,     relu_bwd_v,
    adam_v,    "avx2",
};

}  // namespace

const Ops& avx2_ops() { return kAvx2Ops; }

}  // namespace fedclust::kern

#else  // non-x86: avx2_ops() must never be selected; alias the reference.

namespace fedclust::kern {
const Ops& avx2_ops() { return scalar_ops(); }
}  // namespace fedclust::kern

#endif
