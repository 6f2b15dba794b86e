#include <algorithm>
#include <cmath>
#include <cstddef>

#include "fedclust/kernels/kernels.hpp"

// Scalar reference kernels. Plain loops, no manual unrolling: these define
// the semantics the SIMD variants are equivalence-tested against.

namespace fedclust::kern {
namespace {

void gemm_nn_s(double* c, const double* a, const double* b, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt_s(double* c, const double* a, const double* b, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void gemm_tn_s(double* c, const double* a, const double* b, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemv_s(double* y, const double* a, const double* x, std::size_t m,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += arow[j] * x[j];
    y[i] = acc;
  }
}

double dot_s(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sumsq_s(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
  return acc;
}

double vsum_s(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

void axpy_s(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scal_s(double* a, double alpha, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) a[i] *= alpha;
}

void vmul_s(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void vsub_s(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void relu_s(double* dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
}

void relu_bwd_s(double* grad, const double* act, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(act[i] > 0.0)) grad[i] = 0.0;
  }
}

void adam_s(double* p, double* m, double* v, const double* g, std::size_t n,
            double lr, double beta1, double beta2, double eps, double b1c,
            double b2c) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / b1c;
    const double vhat = v[i] / b2c;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

constexpr Ops kScalarOps = {
    gemm_nn_s, gemm_nt_s, gemm_tn_s, gemv_s, dot_s,      sumsq_s, vsum_s,
    axpy_s,    scal_s,    vmul_s,    vsub_s, relu_s,     relu_bwd_s,
    adam_s,    "scalar",
};

}  // namespace

const Ops& scalar_ops() { return kScalarOps; }

}  // namespace fedclust::kern
