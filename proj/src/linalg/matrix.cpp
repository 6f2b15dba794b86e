#include "fedclust/linalg/matrix.hpp"

#include <cmath>
#include <cstring>

#include "fedclust/errors.hpp"
#include "fedclust/kernels/kernels.hpp"

namespace fedclust {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), v_(std::move(values)) {
  if (v_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: value count does not match rows*cols");
  }
}

Matrix Matrix::filled(std::size_t rows, std::size_t cols, double value) {
  Matrix m(rows, cols);
  std::fill(m.v_.begin(), m.v_.end(), value);
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  for (double x : v_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

namespace lin {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" +
                     std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  Matrix c(a.rows(), b.cols());
  kern::ops().gemm_nn(c.data(), a.data(), b.data(), a.rows(), a.cols(),
                      b.cols(), false);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ");
  }
  Matrix c(a.rows(), b.rows());
  kern::ops().gemm_nt(c.data(), a.data(), b.data(), a.rows(), a.cols(),
                      b.rows(), false);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: inner dimensions differ");
  }
  Matrix c(a.cols(), b.cols());
  kern::ops().gemm_tn(c.data(), a.data(), b.data(), a.rows(), a.cols(),
                      b.cols(), false);
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

Matrix slice_rows(const Matrix& a, std::size_t r0, std::size_t r1) {
  if (r0 > r1 || r1 > a.rows()) throw ShapeError("slice_rows: bad range");
  Matrix out(r1 - r0, a.cols());
  std::memcpy(out.data(), a.data() + r0 * a.cols(),
              (r1 - r0) * a.cols() * sizeof(double));
  return out;
}

Matrix slice_cols(const Matrix& a, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > a.cols()) throw ShapeError("slice_cols: bad range");
  Matrix out(a.rows(), c1 - c0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::memcpy(out.data() + i * out.cols(), a.data() + i * a.cols() + c0,
                (c1 - c0) * sizeof(double));
  }
  return out;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("hcat: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::memcpy(out.data() + i * out.cols(), a.data() + i * a.cols(),
                a.cols() * sizeof(double));
    std::memcpy(out.data() + i * out.cols() + a.cols(),
                b.data() + i * b.cols(), b.cols() * sizeof(double));
  }
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  }
  return m;
}

double frobenius_norm(const Matrix& a) {
  return std::sqrt(kern::ops().sumsq(a.data(), a.size()));
}

Matrix invert(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("invert: non-square input");
  const std::size_t n = a.rows();
  Matrix work = a;
  Matrix inv = Matrix::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(work(r, col)) > std::fabs(work(pivot, col))) pivot = r;
    }
    if (std::fabs(work(pivot, col)) < 1e-300) {
      throw NumericError("invert: singular matrix");
    }
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(work(col, j), work(pivot, j));
        std::swap(inv(col, j), inv(pivot, j));
      }
    }
    const double scale = 1.0 / work(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      work(col, j) *= scale;
      inv(col, j) *= scale;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = work(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        work(r, j) -= f * work(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

}  // namespace lin
}  // namespace fedclust
