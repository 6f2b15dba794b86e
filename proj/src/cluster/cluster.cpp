#include "fedclust/cluster/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedclust/errors.hpp"
#include "fedclust/kernels/kernels.hpp"
#include "fedclust/parallel.hpp"
#include "fedclust/rand/rng.hpp"

namespace fedclust::cluster {

Matrix affinity_from_similarity(const Matrix& s) {
  if (s.rows() != s.cols()) {
    throw ShapeError("affinity: similarity matrix must be square");
  }
  const std::size_t n = s.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::fabs(s(i, j) - s(j, i)) > 1e-9) {
        throw ShapeError("affinity: similarity matrix is not symmetric");
      }
    }
  }
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      w(i, j) = i == j ? 0.0 : (s(i, j) + 1.0) * 0.5;
    }
  }
  return w;
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

Matrix kmeanspp_seed(const Matrix& points, std::size_t k, rng::Rng& rng) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  Matrix centroids(k, d);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());

  std::size_t first = rng.uniform_int(n);
  std::copy(points.data() + first * d, points.data() + (first + 1) * d,
            centroids.data());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dd =
          sq_dist(points.data() + i * d, centroids.data() + (c - 1) * d, d);
      min_d2[i] = std::min(min_d2[i], dd);
      total += min_d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += min_d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(n);
    }
    std::copy(points.data() + pick * d, points.data() + (pick + 1) * d,
              centroids.data() + c * d);
  }
  return centroids;
}

KMeansResult lloyd(const Matrix& points, std::size_t k, Matrix centroids,
                   const KMeansOptions& opt) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  std::vector<std::uint32_t> labels(n, 0);
  std::vector<std::size_t> counts(k, 0);
  Matrix next(k, d);

  for (std::size_t iter = 0; iter < opt.max_iters; ++iter) {
    // Assignment: nearest centroid, ties to the lowest index.
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sq_dist(points.data() + i * d,
                                  centroids.data() + c * d, d);
        if (dd < best) {
          best = dd;
          arg = static_cast<std::uint32_t>(c);
        }
      }
      labels[i] = arg;
    }

    // Update.
    std::fill(next.values().begin(), next.values().end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      counts[labels[i]]++;
      kern::ops().axpy(next.data() + labels[i] * d, 1.0, points.data() + i * d, d);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        kern::ops().scal(next.data() + c * d,
                         1.0 / static_cast<double>(counts[c]), d);
      }
    }
    // Empty clusters take the point farthest from its current centroid.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      double worst = -1.0;
      std::size_t steal = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] <= 1) continue;
        const double dd = sq_dist(points.data() + i * d,
                                  centroids.data() + labels[i] * d, d);
        if (dd > worst) {
          worst = dd;
          steal = i;
        }
      }
      std::copy(points.data() + steal * d, points.data() + (steal + 1) * d,
                next.data() + c * d);
      counts[labels[steal]]--;
      labels[steal] = static_cast<std::uint32_t>(c);
      counts[c] = 1;
    }

    double shift = 0.0;
    for (std::size_t i = 0; i < k * d; ++i) {
      const double diff = next.data()[i] - centroids.data()[i];
      shift += diff * diff;
    }
    centroids = next;
    if (shift <= opt.tol) break;
  }

  // Final assignment against the converged centroids, then exact WCSS
  // against member means.
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = sq_dist(points.data() + i * d, centroids.data() + c * d, d);
      if (dd < best) {
        best = dd;
        arg = static_cast<std::uint32_t>(c);
      }
    }
    labels[i] = arg;
  }
  KMeansResult result;
  result.labels = std::move(labels);
  result.centroids = std::move(centroids);
  result.wcss = wcss(points, result.labels, k);
  return result;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& opt, const Matrix* warm_centroids) {
  const std::size_t n = points.rows();
  if (k < 1 || k > n) throw ShapeError("kmeans: k out of range");

  const std::size_t extra = warm_centroids != nullptr ? 1 : 0;
  const std::size_t total = opt.restarts + extra;
  std::vector<KMeansResult> results(total);

  parallel_for_each(total, opt.workers, [&](std::size_t r) {
    if (extra == 1 && r == 0) {
      if (warm_centroids->rows() != k || warm_centroids->cols() != points.cols()) {
        throw ShapeError("kmeans: warm start has wrong shape");
      }
      results[0] = lloyd(points, k, *warm_centroids, opt);
      return;
    }
    rng::Rng rng(rng::derive(seed, "restart", r - extra));
    results[r] = lloyd(points, k, kmeanspp_seed(points, k, rng), opt);
  });

  std::size_t best = 0;
  for (std::size_t r = 1; r < total; ++r) {
    if (results[r].wcss < results[best].wcss) best = r;
  }
  return std::move(results[best]);
}

Matrix spectral_embedding(const Matrix& affinity, std::size_t k,
                          std::uint64_t seed, const SpectralOptions& opt) {
  const std::size_t n = affinity.rows();
  if (affinity.cols() != n) throw ShapeError("spectral: affinity must be square");
  if (k < 1 || k > n) throw ShapeError("spectral: k out of range");

  std::vector<double> dinv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double deg = kern::ops().vsum(affinity.data() + i * n, n);
    if (deg <= 0.0) {
      throw StateError("spectral: isolated vertex " + std::to_string(i) +
                       " (zero degree)");
    }
    dinv_sqrt[i] = 1.0 / std::sqrt(deg);
  }

  // Symmetric normalized Laplacian.
  Matrix lap(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double norm = affinity(i, j) * dinv_sqrt[i] * dinv_sqrt[j];
      lap(i, j) = (i == j ? 1.0 : 0.0) - norm;
    }
  }

  lin::EigOptions eig_opt = opt.eig;
  eig_opt.seed = rng::derive(seed, "eig");
  const auto eig = lin::sym_eig_smallest(lap, k, eig_opt);

  Matrix rows = eig.vectors;  // n x k
  for (std::size_t i = 0; i < n; ++i) {
    double* row = rows.data() + i * k;
    const double norm = std::sqrt(kern::ops().sumsq(row, k));
    if (norm < 1e-200) {
      std::fill(row, row + k, 0.0);
      row[0] = 1.0;
    } else {
      kern::ops().scal(row, 1.0 / norm, k);
    }
  }
  return rows;
}

SpectralResult spectral_cluster(const Matrix& s, std::size_t k,
                                std::uint64_t seed, const SpectralOptions& opt) {
  const Matrix w = affinity_from_similarity(s);
  SpectralResult result;
  result.embedding = spectral_embedding(w, k, seed, opt);
  const auto km = kmeans(result.embedding, k, rng::derive(seed, "kmeans"),
                         opt.kmeans);
  result.assignment.labels = km.labels;
  result.assignment.k = k;
  return result;
}

double wcss(const Matrix& points, const std::vector<std::uint32_t>& labels,
            std::size_t k) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (labels.size() != n) throw ShapeError("wcss: labels do not cover all rows");

  Matrix means(k, d);
  std::vector<double> counts(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw ShapeError("wcss: label out of range");
    counts[labels[i]] += 1.0;
    kern::ops().axpy(means.data() + labels[i] * d, 1.0, points.data() + i * d, d);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0.0) {
      kern::ops().scal(means.data() + c * d, 1.0 / counts[c], d);
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += sq_dist(points.data() + i * d, means.data() + labels[i] * d, d);
  }
  return total;
}

WcssCurve wcss_curve(const Matrix& s, std::size_t k_max, std::uint64_t seed,
                     const SpectralOptions& opt) {
  if (k_max < 1 || k_max > s.rows()) {
    throw ShapeError("wcss_curve: k_max out of range");
  }
  const Matrix w = affinity_from_similarity(s);
  const Matrix rep = spectral_embedding(w, k_max, seed, opt);

  WcssCurve curve;
  Matrix prev_centroids;
  for (std::size_t k = 1; k <= k_max; ++k) {
    Matrix warm;
    const Matrix* warm_ptr = nullptr;
    if (k > 1) {
      // Previous centroids plus the farthest point: guarantees the curve
      // never increases.
      warm = Matrix(k, rep.cols());
      std::copy(prev_centroids.data(),
                prev_centroids.data() + prev_centroids.size(), warm.data());
      double worst = -1.0;
      std::size_t far_idx = 0;
      for (std::size_t i = 0; i < rep.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c + 1 < k; ++c) {
          best = std::min(best, sq_dist(rep.data() + i * rep.cols(),
                                        prev_centroids.data() + c * rep.cols(),
                                        rep.cols()));
        }
        if (best > worst) {
          worst = best;
          far_idx = i;
        }
      }
      std::copy(rep.data() + far_idx * rep.cols(),
                rep.data() + (far_idx + 1) * rep.cols(),
                warm.data() + (k - 1) * rep.cols());
      warm_ptr = &warm;
    }
    const auto km =
        kmeans(rep, k, rng::derive(seed, "curve", k), opt.kmeans, warm_ptr);
    curve.points.emplace_back(k, km.wcss);
    prev_centroids = km.centroids;
  }
  return curve;
}

std::size_t elbow(const WcssCurve& curve) {
  if (curve.points.size() < 3) {
    throw StateError("elbow: need at least 3 curve points");
  }
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_k = curve.points[1].first;
  for (std::size_t i = 1; i + 1 < curve.points.size(); ++i) {
    const double second_diff = curve.points[i - 1].second -
                               2.0 * curve.points[i].second +
                               curve.points[i + 1].second;
    if (second_diff > best) {
      best = second_diff;
      best_k = curve.points[i].first;
    }
  }
  return best_k;
}

double adjusted_rand_index(const std::vector<std::uint32_t>& a,
                           const std::vector<std::uint32_t>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("ari: label vectors must be equal-length and non-empty");
  }
  const std::size_t n = a.size();
  const std::uint32_t ka = *std::max_element(a.begin(), a.end()) + 1;
  const std::uint32_t kb = *std::max_element(b.begin(), b.end()) + 1;
  std::vector<std::uint64_t> table(static_cast<std::size_t>(ka) * kb, 0);
  std::vector<std::uint64_t> ra(ka, 0), rb(kb, 0);
  for (std::size_t i = 0; i < n; ++i) {
    table[static_cast<std::size_t>(a[i]) * kb + b[i]]++;
    ra[a[i]]++;
    rb[b[i]]++;
  }
  auto comb2 = [](std::uint64_t x) {
    return static_cast<double>(x) * static_cast<double>(x - 1) / 2.0;
  };
  double sum_ij = 0.0;
  for (std::uint64_t v : table) {
    if (v > 1) sum_ij += comb2(v);
  }
  double sum_a = 0.0, sum_b = 0.0;
  for (std::uint64_t v : ra) sum_a += comb2(v);
  for (std::uint64_t v : rb) sum_b += comb2(v);
  const double total = comb2(n);
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both clusterings trivial
  return (sum_ij - expected) / (max_index - expected);
}

}  // namespace fedclust::cluster
