#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedclust/embed/embed.hpp"
#include "fedclust/fed/bus.hpp"
#include "fedclust/linalg/matrix.hpp"

namespace fedclust::smpc {

// Invertible masking matrix for one site-pair session. Built as a
// Chebyshev-Vandermonde generator on distinct nodes (the real-valued MDS-style
// construction: every square submatrix is nonsingular) composed with a random
// orthogonal rotation, which keeps sampled submatrices numerically full-rank.
// Raw monomial Vandermonde is hopelessly ill-conditioned at these widths.
struct MaskPair {
  std::size_t dim = 0;  // even
  Matrix m;             // d x d
  Matrix m_inv;
  std::uint64_t seed = 0;

  Matrix m_left() const;   // first d/2 columns of M
  Matrix m_right() const;  // last d/2 columns of M
};

// Throws ShapeError for odd or tiny d, NumericError if no attempt (of 8,
// seed perturbed each time) satisfies the inverse accuracy (1e-10) and
// condition bound (1e6).
MaskPair gen_mask(std::size_t d, std::uint64_t seed);

double condition_number(const Matrix& m);

// Orthonormal basis of the left null space of m_left (vectors x with
// x^T m_left = 0); dimension d x d/2. Backs the share-ambiguity property.
Matrix left_nullspace(const Matrix& m_left);

// Row-wise L2 normalization; throws NumericError naming the patient on a
// zero-norm row.
void l2_normalize(embed::EmbeddingMatrix& em);
void l2_normalize_rows(Matrix& m);

// Local share computation. Only a1 (site 1) and b2 (site 2) ever leave the
// owning site.
struct Site1Shares {
  Matrix a1;  // A * M_left   (N1 x d/2) - transmitted
  Matrix a2;  // A * M_right  (N1 x d/2) - never transmitted
};
struct Site2Shares {
  Matrix b1;  // top d/2 rows of M_inv * B  (d/2 x N2) - never transmitted
  Matrix b2;  // bottom d/2 rows            (d/2 x N2) - transmitted
};
Site1Shares make_site1_shares(const Matrix& a, const MaskPair& mask);
Site2Shares make_site2_shares(const Matrix& b, const MaskPair& mask);

// Two-party secure dot product: A is site 1's embeddings as rows (N1 x d),
// B site 2's embeddings as columns (d x N2). Returns V = V_a + V_b = A*B.
// With a bus the six protocol steps run as messages (mask distribution,
// share exchange through the server, partial products back to the server);
// without one the same block algebra runs in place.
Matrix secure_dot(const Matrix& a, const Matrix& b, const MaskPair& mask,
                  fed::Bus* bus = nullptr, int site1 = 0, int site2 = 1,
                  const std::string& session = "");

struct PatientRef {
  int site_id = 0;
  std::uint32_t row = 0;
  std::string patient_id;
};

struct SimilarityMatrix {
  Matrix s;  // P x P, symmetric, unit diagonal
  std::vector<PatientRef> index;

  std::size_t size() const { return index.size(); }
};

// Global patient similarity: within-site blocks in local plaintext, one
// fresh MaskPair per unordered site pair for the cross-site blocks. Inputs
// must be L2-normalized. Sites are ordered by site_id for global indexing.
SimilarityMatrix assemble_similarity(
    const std::vector<embed::EmbeddingMatrix>& embeddings, std::uint64_t seed,
    fed::Bus* bus = nullptr, int workers = 1);

// Centralized plaintext reference: pool rows, S = E * E^T.
SimilarityMatrix assemble_similarity_plaintext(
    const std::vector<embed::EmbeddingMatrix>& embeddings);

double rmse(const Matrix& a, const Matrix& b);

// Binary container (dimension header + float64 lower triangle) plus the
// patient index registry as JSON.
void save_similarity(const std::string& matrix_path,
                     const std::string& registry_path,
                     const SimilarityMatrix& sim);
SimilarityMatrix load_similarity(const std::string& matrix_path,
                                 const std::string& registry_path);

}  // namespace fedclust::smpc
