#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fedclust/linalg/eigen_sym.hpp"
#include "fedclust/linalg/matrix.hpp"

namespace fedclust::cluster {

// W = (S+1)/2 elementwise (cosine range onto [0,1], order preserved),
// diagonal zeroed. Input must be symmetric.
Matrix affinity_from_similarity(const Matrix& s);

struct ClusterAssignment {
  std::vector<std::uint32_t> labels;  // global patient index -> cluster id
  std::size_t k = 0;
};

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iters = 300;
  double tol = 1e-8;
  int workers = 1;
};

struct KMeansResult {
  std::vector<std::uint32_t> labels;
  Matrix centroids;  // k x dims
  double wcss = 0.0;
};

// Lloyd iterations from k-means++ seeding, best of `restarts` by lowest
// WCSS (ties to the lowest restart index). An optional warm start is
// evaluated before the random restarts and wins ties.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& opt = {},
                    const Matrix* warm_centroids = nullptr);

struct SpectralOptions {
  lin::EigOptions eig;
  KMeansOptions kmeans;
};

// Rows of the k smallest eigenvectors of the symmetric normalized Laplacian
// L = I - D^{-1/2} W D^{-1/2}, L2-normalized per row (zero rows map to the
// first unit basis vector). Throws StateError on isolated vertices.
Matrix spectral_embedding(const Matrix& affinity, std::size_t k,
                          std::uint64_t seed, const SpectralOptions& opt = {});

struct SpectralResult {
  ClusterAssignment assignment;
  Matrix embedding;  // the row-normalized spectral coordinates used
};

SpectralResult spectral_cluster(const Matrix& s, std::size_t k,
                                std::uint64_t seed,
                                const SpectralOptions& opt = {});

// Sum over clusters of squared distances to the cluster mean; empty
// clusters contribute zero.
double wcss(const Matrix& points, const std::vector<std::uint32_t>& labels,
            std::size_t k);

struct WcssCurve {
  std::vector<std::pair<std::size_t, double>> points;  // (k, WCSS_k), k ascending
};

// WCSS over k = 1..k_max on one fixed representation: the k_max-dimensional
// spectral embedding. Each k's k-means warm-starts from the previous k's
// centroids plus the farthest point, which makes the curve monotonically
// non-increasing by construction.
WcssCurve wcss_curve(const Matrix& s, std::size_t k_max, std::uint64_t seed,
                     const SpectralOptions& opt = {});

// Interior k maximizing the second difference WCSS_{k-1} - 2 WCSS_k +
// WCSS_{k+1}; ties toward smaller k. Requires at least 3 curve points.
std::size_t elbow(const WcssCurve& curve);

double adjusted_rand_index(const std::vector<std::uint32_t>& a,
                           const std::vector<std::uint32_t>& b);

}  // namespace fedclust::cluster
