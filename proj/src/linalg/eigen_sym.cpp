#include "fedclust/linalg/eigen_sym.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedclust/errors.hpp"
#include "fedclust/kernels/kernels.hpp"
#include "fedclust/parallel.hpp"
#include "fedclust/rand/rng.hpp"

namespace fedclust::lin {

namespace {

inline double sign_like(double a, double b) {
  return b >= 0.0 ? std::fabs(a) : -std::fabs(a);
}

// Householder reduction to tridiagonal form, EISPACK tred2 lineage.
// On return a holds the accumulated orthogonal transform Q.
void tred2(Matrix& a, std::vector<double>& d, std::vector<double>& e) {
  const std::size_t n = a.rows();
  d.assign(n, 0.0);
  e.assign(n, 0.0);
  if (n == 1) {
    d[0] = a(0, 0);
    a(0, 0) = 1.0;
    return;
  }

  for (std::size_t i = n - 1; i >= 1; --i) {
    const std::size_t l = i - 1;
    double h = 0.0;
    double scale = 0.0;
    if (l > 0) {
      for (std::size_t k = 0; k <= l; ++k) scale += std::fabs(a(i, k));
      if (scale == 0.0) {
        e[i] = a(i, l);
      } else {
        for (std::size_t k = 0; k <= l; ++k) {
          a(i, k) /= scale;
          h += a(i, k) * a(i, k);
        }
        double f = a(i, l);
        double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
        e[i] = scale * g;
        h -= f * g;
        a(i, l) = f - g;
        f = 0.0;
        for (std::size_t j = 0; j <= l; ++j) {
          a(j, i) = a(i, j) / h;
          g = 0.0;
          for (std::size_t k = 0; k <= j; ++k) g += a(j, k) * a(i, k);
          for (std::size_t k = j + 1; k <= l; ++k) g += a(k, j) * a(i, k);
          e[j] = g / h;
          f += e[j] * a(i, j);
        }
        const double hh = f / (h + h);
        for (std::size_t j = 0; j <= l; ++j) {
          f = a(i, j);
          e[j] = g = e[j] - hh * f;
          for (std::size_t k = 0; k <= j; ++k) {
            a(j, k) -= f * e[k] + g * a(i, k);
          }
        }
      }
    } else {
      e[i] = a(i, l);
    }
    d[i] = h;
  }

  d[0] = 0.0;
  e[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] != 0.0) {
      for (std::size_t j = 0; j < i; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k < i; ++k) g += a(i, k) * a(k, j);
        for (std::size_t k = 0; k < i; ++k) a(k, j) -= g * a(k, i);
      }
    }
    d[i] = a(i, i);
    a(i, i) = 1.0;
    for (std::size_t j = 0; j < i; ++j) a(j, i) = a(i, j) = 0.0;
  }
}

void sort_pairs_ascending(std::vector<double>& d, Matrix& z) {
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
  std::vector<double> ds(n);
  Matrix zs(z.rows(), z.cols());
  for (std::size_t j = 0; j < n; ++j) {
    ds[j] = d[order[j]];
    for (std::size_t r = 0; r < z.rows(); ++r) zs(r, j) = z(r, order[j]);
  }
  d = std::move(ds);
  z = std::move(zs);
}

struct LanczosFailure {};

// Lanczos with full (two-pass) reorthogonalization on op = g*I - A, whose
// largest eigenpairs are A's smallest. V keeps basis vectors as rows.
SymEig lanczos_smallest(const Matrix& a, std::size_t k, const EigOptions& opt) {
  const std::size_t n = a.rows();
  const auto& K = kern::ops();

  // Gershgorin upper bound makes the shifted operator positive semidefinite.
  double gersh = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) off += std::fabs(a(i, j));
    }
    gersh = std::max(gersh, a(i, i) + off);
  }
  const double shift = gersh + 1.0;

  auto apply_op = [&](const double* x, double* y) {
    parallel_for(n, opt.workers, [&](std::size_t r0, std::size_t r1) {
      K.gemv(y + r0, a.data() + r0 * n, x, r1 - r0, n);
    });
    for (std::size_t i = 0; i < n; ++i) y[i] = shift * x[i] - y[i];
  };

  const std::size_t m_max = std::min(opt.max_basis, n);
  Matrix v(m_max, n);
  std::vector<double> alpha;
  std::vector<double> beta;  // beta[j] couples vectors j and j+1
  alpha.reserve(m_max);
  beta.reserve(m_max);

  rng::Rng rng(opt.seed);
  auto fill_random_orthonormal = [&](double* w, std::size_t basis_size) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) w[i] = rng.uniform(-1.0, 1.0);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < basis_size; ++i) {
          const double c = K.dot(w, v.data() + i * n, n);
          K.axpy(w, -c, v.data() + i * n, n);
        }
      }
      const double norm = std::sqrt(K.sumsq(w, n));
      if (norm > 1e-8) {
        K.scal(w, 1.0 / norm, n);
        return;
      }
    }
    throw LanczosFailure{};
  };

  fill_random_orthonormal(v.data(), 0);

  std::vector<double> w(n);
  std::vector<double> ritz_res;
  SymEig result;

  std::size_t m = 0;
  while (m < m_max) {
    apply_op(v.data() + m * n, w.data());
    if (m > 0) K.axpy(w.data(), -beta[m - 1], v.data() + (m - 1) * n, n);
    const double aj = K.dot(w.data(), v.data() + m * n, n);
    alpha.push_back(aj);
    K.axpy(w.data(), -aj, v.data() + m * n, n);
    // Full reorthogonalization; two passes suffice in double precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i <= m; ++i) {
        const double c = K.dot(w.data(), v.data() + i * n, n);
        K.axpy(w.data(), -c, v.data() + i * n, n);
      }
    }
    double bj = std::sqrt(K.sumsq(w.data(), n));
    ++m;
    if (m == m_max) break;
    if (bj < 1e-13 * (std::fabs(shift) + std::fabs(gersh) + 1.0)) {
      // Invariant subspace exhausted; continue with a fresh direction.
      fill_random_orthonormal(v.data() + m * n, m);
      beta.push_back(0.0);
    } else {
      K.scal(w.data(), 1.0 / bj, n);
      std::copy(w.begin(), w.end(), v.data() + m * n);
      beta.push_back(bj);
    }

    const bool check = (m % opt.check_interval == 0) || m + 1 == m_max;
    if (!check || m < k + 2) continue;

    // Rayleigh-Ritz on the tridiagonal section.
    std::vector<double> d(alpha.begin(), alpha.begin() + m);
    std::vector<double> e(m, 0.0);
    for (std::size_t i = 1; i < m; ++i) e[i] = beta[i - 1];
    Matrix s = Matrix::identity(m);
    tridiag_ql(d, e, s);
    // op eigenvalues descending = A eigenvalues ascending.
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return d[x] > d[y]; });

    const double last_beta = beta.empty() ? 0.0 : beta.back();
    bool converged = true;
    const double tol = opt.tol * std::max(1.0, std::fabs(shift));
    for (std::size_t j = 0; j < k; ++j) {
      const double res = std::fabs(last_beta * s(m - 1, order[j]));
      if (res > tol) {
        converged = false;
        break;
      }
    }
    if (!converged) continue;

    result.values.resize(k);
    Matrix sk(m, k);
    for (std::size_t j = 0; j < k; ++j) {
      result.values[j] = shift - d[order[j]];
      for (std::size_t i = 0; i < m; ++i) sk(i, j) = s(i, order[j]);
    }
    result.vectors = Matrix(n, k);
    K.gemm_tn(result.vectors.data(), v.data(), sk.data(), m, n, k, false);
    return result;
  }
  throw LanczosFailure{};
}

}  // namespace

void tridiag_ql(std::vector<double>& d, std::vector<double>& e, Matrix& z) {
  const std::size_t n = d.size();
  if (n == 0) return;
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;

  for (std::size_t l = 0; l < n; ++l) {
    int iter = 0;
    std::size_t m;
    do {
      for (m = l; m + 1 < n; ++m) {
        const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
        if (std::fabs(e[m]) <= 1e-16 * dd) break;
      }
      if (m != l) {
        if (iter++ == 64) {
          throw NumericError("tridiag_ql: no convergence in 64 iterations");
        }
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + sign_like(r, g));
        double s = 1.0;
        double c = 1.0;
        double p = 0.0;
        for (std::size_t i = m; i-- > l;) {
          double f = s * e[i];
          const double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
          for (std::size_t row = 0; row < z.rows(); ++row) {
            f = z(row, i + 1);
            z(row, i + 1) = s * z(row, i) + c * f;
            z(row, i) = c * z(row, i) - s * f;
          }
        }
        if (r == 0.0 && m - l > 1) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

SymEig sym_eig_full(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("sym_eig_full: non-square input");
  Matrix z = a;
  std::vector<double> d;
  std::vector<double> e;
  tred2(z, d, e);
  tridiag_ql(d, e, z);
  sort_pairs_ascending(d, z);
  return {std::move(d), std::move(z)};
}

SymEig sym_eig_smallest(const Matrix& a, std::size_t k, const EigOptions& opt) {
  const std::size_t n = a.rows();
  if (a.rows() != a.cols()) {
    throw ShapeError("sym_eig_smallest: non-square input");
  }
  if (k == 0 || k > n) throw ShapeError("sym_eig_smallest: bad k");

  const bool dense = n <= opt.dense_threshold || k * 3 >= n;
  if (!dense) {
    try {
      return lanczos_smallest(a, k, opt);
    } catch (const LanczosFailure&) {
      // fall through to the dense path
    }
  }
  SymEig full = sym_eig_full(a);
  SymEig out;
  out.values.assign(full.values.begin(), full.values.begin() + k);
  out.vectors = lin::slice_cols(full.vectors, 0, k);
  return out;
}

}  // namespace fedclust::lin
