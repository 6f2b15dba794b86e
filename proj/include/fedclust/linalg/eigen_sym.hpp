#pragma once

#include <cstdint>
#include <vector>

#include "fedclust/linalg/matrix.hpp"

namespace fedclust::lin {

struct SymEig {
  std::vector<double> values;  // ascending
  Matrix vectors;              // n x k, column j pairs with values[j]
};

struct EigOptions {
  // Below this order the dense path is used unconditionally.
  std::size_t dense_threshold = 1024;
  // Lanczos basis limit; non-convergence falls back to the dense path.
  std::size_t max_basis = 900;
  std::size_t check_interval = 24;
  double tol = 1e-9;
  std::uint64_t seed = 0x7a3c9e1fULL;
  int workers = 1;
};

// Full spectrum of a symmetric matrix: Householder tridiagonalization
// followed by implicit-shift QL with accumulated rotations.
SymEig sym_eig_full(const Matrix& a);

// k smallest eigenpairs. Dense solve for small matrices; Lanczos with full
// reorthogonalization on the Gershgorin-shifted operator for large ones.
SymEig sym_eig_smallest(const Matrix& a, std::size_t k,
                        const EigOptions& opt = {});

// Implicit-shift QL on a tridiagonal matrix, rotations accumulated into z.
// d holds the diagonal, e the subdiagonal with e[0] unused (e[i] couples
// rows i-1 and i). On return d holds eigenvalues (unsorted), z's columns
// the corresponding vectors.
void tridiag_ql(std::vector<double>& d, std::vector<double>& e, Matrix& z);

}  // namespace fedclust::lin
