#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fedclust/cluster/cluster.hpp"
#include "fedclust/errors.hpp"
#include "fedclust/rand/rng.hpp"
#include "fedclust/smpc/smpc.hpp"

using namespace fedclust;
using namespace fedclust::cluster;
using fedclust::rng::Rng;

namespace {

// Unit vectors near one of `g` well-separated directions; returns points and
// planted labels.
std::pair<Matrix, std::vector<std::uint32_t>> blobs_on_sphere(
    Rng& rng, std::size_t n, std::size_t g, std::size_t dim, double noise) {
  Matrix pts(n, dim);
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::uint32_t>(i % g);
    labels[i] = c;
    for (std::size_t j = 0; j < dim; ++j) {
      pts(i, j) = (j == c ? 3.0 : 0.0) + noise * rng.normal();
    }
  }
  smpc::l2_normalize_rows(pts);
  return {pts, labels};
}

Matrix cosine_similarity(const Matrix& unit_rows) {
  return lin::matmul_nt(unit_rows, unit_rows);
}

}  // namespace

TEST_CASE("affinity map endpoints and diagonal") {
  Matrix s(2, 2, {1.0, -1.0, -1.0, 1.0});
  const Matrix w = affinity_from_similarity(s);
  CHECK(w(0, 0) == 0.0);  // diagonal removed
  CHECK(w(0, 1) == 0.0);  // cosine -1 -> 0
  Matrix s2(2, 2, {1.0, 0.0, 0.0, 1.0});
  const Matrix w2 = affinity_from_similarity(s2);
  CHECK(w2(0, 1) == 0.5);  // cosine 0 -> 0.5
  Matrix s3(2, 2, {1.0, 1.0, 1.0, 1.0});
  CHECK(affinity_from_similarity(s3)(0, 1) == 1.0);  // cosine 1 -> 1

  Matrix asym(2, 2, {1.0, 0.5, 0.2, 1.0});
  CHECK_THROWS_AS(affinity_from_similarity(asym), ShapeError);
}

TEST_CASE("k=1 assigns every patient to cluster 0") {
  Rng rng(1);
  auto [pts, planted] = blobs_on_sphere(rng, 30, 3, 6, 0.1);
  const Matrix s = cosine_similarity(pts);
  const auto result = spectral_cluster(s, 1, 42);
  for (auto l : result.assignment.labels) CHECK(l == 0);
}

TEST_CASE("two disconnected blocks separate exactly at k=2") {
  // S: +1 within blocks, -1 across -> affinity is block diagonal.
  const std::size_t n = 20;
  Matrix s(n, n);
  std::vector<std::uint32_t> component(n);
  for (std::size_t i = 0; i < n; ++i) component[i] = i < 12 ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      s(i, j) = component[i] == component[j] ? 1.0 : -1.0;
    }
  }
  const auto result = spectral_cluster(s, 2, 7);
  CHECK(adjusted_rand_index(result.assignment.labels, component) == 1.0);
}

TEST_CASE("spectral clustering recovers 3 planted blobs with ARI >= 0.9") {
  Rng rng(3);
  auto [pts, planted] = blobs_on_sphere(rng, 90, 3, 8, 0.35);
  const Matrix s = cosine_similarity(pts);
  const auto result = spectral_cluster(s, 3, 11);
  CHECK(adjusted_rand_index(result.assignment.labels, planted) >= 0.9);
}

TEST_CASE("spectral clustering is deterministic per seed") {
  Rng rng(4);
  auto [pts, planted] = blobs_on_sphere(rng, 40, 2, 5, 0.3);
  const Matrix s = cosine_similarity(pts);
  const auto a = spectral_cluster(s, 2, 9);
  const auto b = spectral_cluster(s, 2, 9);
  CHECK(a.assignment.labels == b.assignment.labels);
}

TEST_CASE("isolated vertex raises a degenerate-graph error") {
  // Zero row in the affinity: cosine -1 against everyone.
  Matrix s(3, 3, {1.0, -1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0});
  CHECK_THROWS_AS(spectral_cluster(s, 2, 1), StateError);
}

TEST_CASE("wcss analytic cases") {
  Matrix same = Matrix::filled(5, 3, 2.5);
  CHECK(wcss(same, std::vector<std::uint32_t>(5, 0), 1) == 0.0);

  Matrix two(2, 1, {-1.0, 1.0});  // distance 2, one cluster
  CHECK(wcss(two, {0, 0}, 1) == doctest::Approx(2.0));

  // Empty cluster contributes zero.
  CHECK(wcss(two, {0, 0}, 3) == doctest::Approx(2.0));
}

TEST_CASE("wcss equals a brute-force double-loop oracle") {
  Rng rng(5);
  Matrix pts(20, 3);
  for (auto& v : pts.values()) v = rng.uniform(-2.0, 2.0);
  std::vector<std::uint32_t> labels(20);
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng.uniform_int(4));

  // Oracle: per cluster, mean by direct summation, then squared distances.
  double expect = 0.0;
  for (std::uint32_t c = 0; c < 4; ++c) {
    double mean[3] = {0, 0, 0};
    double count = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      if (labels[i] != c) continue;
      count += 1;
      for (std::size_t j = 0; j < 3; ++j) mean[j] += pts(i, j);
    }
    if (count == 0) continue;
    for (double& m : mean) m /= count;
    for (std::size_t i = 0; i < 20; ++i) {
      if (labels[i] != c) continue;
      for (std::size_t j = 0; j < 3; ++j) {
        expect += (pts(i, j) - mean[j]) * (pts(i, j) - mean[j]);
      }
    }
  }
  CHECK(wcss(pts, labels, 4) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("kmeans on well-separated blobs reaches the planted partition") {
  Rng rng(6);
  auto [pts, planted] = blobs_on_sphere(rng, 60, 4, 6, 0.15);
  const auto km = kmeans(pts, 4, 21);
  CHECK(adjusted_rand_index(km.labels, planted) == 1.0);
  const auto serial = kmeans(pts, 4, 21, {.workers = 1});
  const auto parallel = kmeans(pts, 4, 21, {.workers = 4});
  CHECK(serial.labels == parallel.labels);
  CHECK(serial.wcss == parallel.wcss);
}

TEST_CASE("elbow picks a constructed sharp bend at k=3") {
  WcssCurve curve;
  // Steep drop to k=3, then flat: second difference peaks at 3.
  curve.points = {{1, 100.0}, {2, 55.0}, {3, 10.0}, {4, 9.0}, {5, 8.5}};
  CHECK(elbow(curve) == 3);
}

TEST_CASE("strictly linear curve ties to the smallest interior k") {
  WcssCurve curve;
  curve.points = {{1, 50.0}, {2, 40.0}, {3, 30.0}, {4, 20.0}, {5, 10.0}};
  CHECK(elbow(curve) == 2);
}

TEST_CASE("elbow needs at least three points") {
  WcssCurve curve;
  curve.points = {{1, 10.0}, {2, 5.0}};
  CHECK_THROWS_AS(elbow(curve), StateError);
}

TEST_CASE("wcss curve is monotone non-increasing and elbows at 3 blobs") {
  Rng rng(8);
  auto [pts, planted] = blobs_on_sphere(rng, 120, 3, 8, 0.3);
  const Matrix s = cosine_similarity(pts);
  const auto curve = wcss_curve(s, 8, 13);
  REQUIRE(curve.points.size() == 8);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].second <= curve.points[i - 1].second + 1e-9);
  }
  CHECK(elbow(curve) == 3);
}

TEST_CASE("ari properties") {
  std::vector<std::uint32_t> a{0, 0, 1, 1, 2, 2};
  CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));
  std::vector<std::uint32_t> permuted{2, 2, 0, 0, 1, 1};
  CHECK(adjusted_rand_index(a, permuted) == doctest::Approx(1.0));

  // Independent labelings hover near zero.
  Rng rng(9);
  std::vector<std::uint32_t> x(400), y(400);
  for (std::size_t i = 0; i < 400; ++i) {
    x[i] = static_cast<std::uint32_t>(rng.uniform_int(3));
    y[i] = static_cast<std::uint32_t>(rng.uniform_int(3));
  }
  CHECK(std::fabs(adjusted_rand_index(x, y)) < 0.1);
}

TEST_CASE("secure and plaintext similarity cluster identically on a fixture") {
  // Three planted groups split across three sites; full SMPC assembly vs the
  // pooled plaintext oracle must induce identical spectral clusterings.
  Rng rng(10);
  std::vector<embed::EmbeddingMatrix> ems;
  std::vector<std::uint32_t> planted;
  const std::size_t per_site = 24;
  for (int site = 0; site < 3; ++site) {
    auto [pts, labels] = blobs_on_sphere(rng, per_site, 3, 8, 0.3);
    embed::EmbeddingMatrix em;
    em.site_id = site;
    em.values = pts;
    for (std::size_t i = 0; i < per_site; ++i) {
      em.patient_ids.push_back("s" + std::to_string(site) + "p" +
                               std::to_string(i));
    }
    ems.push_back(std::move(em));
    planted.insert(planted.end(), labels.begin(), labels.end());
  }

  const auto secure = smpc::assemble_similarity(ems, 99);
  const auto oracle = smpc::assemble_similarity_plaintext(ems);
  const auto from_secure = spectral_cluster(secure.s, 3, 17);
  const auto from_oracle = spectral_cluster(oracle.s, 3, 17);
  CHECK(adjusted_rand_index(from_secure.assignment.labels,
                            from_oracle.assignment.labels) == 1.0);
  CHECK(adjusted_rand_index(from_secure.assignment.labels, planted) >= 0.9);
}
