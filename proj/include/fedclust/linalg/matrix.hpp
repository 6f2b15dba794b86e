#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fedclust {

// Dense row-major double matrix; the one value type that crosses every
// module boundary (batches, weights, embeddings, similarity blocks).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), v_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix filled(std::size_t rows, std::size_t cols, double value);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return v_[r * cols_ + c];
  }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  std::span<double> row(std::size_t r) { return {v_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {v_.data() + r * cols_, cols_};
  }

  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }

  bool all_finite() const;
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> v_;
};

namespace lin {

// C = A * B               (throws ShapeError on mismatch)
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// Rows [r0, r1) / columns [c0, c1) as a copy.
Matrix slice_rows(const Matrix& a, std::size_t r0, std::size_t r1);
Matrix slice_cols(const Matrix& a, std::size_t c0, std::size_t c1);
Matrix hcat(const Matrix& a, const Matrix& b);

double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);

// Gauss-Jordan inverse with partial pivoting; throws NumericError on
// (numerically) singular input. Intended for small matrices.
Matrix invert(const Matrix& a);

}  // namespace lin
}  // namespace fedclust
