#include "fedclust/smpc/smpc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "fedclust/errors.hpp"
#include "fedclust/kernels/kernels.hpp"
#include "fedclust/linalg/eigen_sym.hpp"
#include "fedclust/parallel.hpp"
#include "fedclust/rand/rng.hpp"
#include "json.hpp"

namespace fedclust::smpc {

namespace {

constexpr double kInverseTol = 1e-10;
constexpr double kConditionBound = 1e6;

// Chebyshev-Vandermonde generator on jittered Chebyshev nodes. Distinct
// nodes in (-1,1); columns are T_0..T_{d-1} evaluated at the nodes.
Matrix chebyshev_vandermonde(std::size_t d, rng::Rng& rng) {
  std::vector<double> nodes(d);
  const double pi = 3.141592653589793238462643;
  for (std::size_t i = 0; i < d; ++i) {
    const double jitter = rng.uniform(-0.4, 0.4);
    nodes[i] = std::cos(pi * (static_cast<double>(i) + 0.5 + jitter) /
                        static_cast<double>(d));
  }
  Matrix v(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    double prev = 1.0;
    double cur = nodes[i];
    v(i, 0) = 1.0;
    if (d > 1) v(i, 1) = cur;
    for (std::size_t j = 2; j < d; ++j) {
      const double next = 2.0 * nodes[i] * cur - prev;
      v(i, j) = next;
      prev = cur;
      cur = next;
    }
  }
  return v;
}

// Haar-ish random orthogonal matrix: modified Gram-Schmidt on a Gaussian
// matrix, diagonal signs fixed positive.
Matrix random_orthogonal(std::size_t d, rng::Rng& rng) {
  Matrix g(d, d);
  for (auto& v : g.values()) v = rng.normal();
  // Orthonormalize columns with a second corrective pass.
  for (std::size_t j = 0; j < d; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += g(i, j) * g(i, k);
        for (std::size_t i = 0; i < d; ++i) g(i, j) -= dot * g(i, k);
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += g(i, j) * g(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("random_orthogonal: degenerate draw");
    const double sign = g(j, j) >= 0.0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < d; ++i) g(i, j) *= sign / norm;
  }
  return g;
}

}  // namespace

Matrix MaskPair::m_left() const { return lin::slice_cols(m, 0, dim / 2); }
Matrix MaskPair::m_right() const { return lin::slice_cols(m, dim / 2, dim); }

double condition_number(const Matrix& m) {
  const Matrix mtm = lin::matmul_tn(m, m);
  const auto eig = lin::sym_eig_full(mtm);
  const double lo = eig.values.front();
  const double hi = eig.values.back();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(hi / lo);
}

MaskPair gen_mask(std::size_t d, std::uint64_t seed) {
  if (d < 2 || d % 2 != 0) {
    throw ShapeError("gen_mask: dimension must be even and >= 2, got " +
                     std::to_string(d));
  }
  for (std::uint64_t attempt = 0; attempt < 8; ++attempt) {
    rng::Rng rng(rng::derive(seed, "mask.gen", attempt));
    const Matrix v = chebyshev_vandermonde(d, rng);
    const Matrix q = random_orthogonal(d, rng);
    MaskPair pair;
    pair.dim = d;
    pair.seed = seed;
    pair.m = lin::matmul(v, q);
    try {
      pair.m_inv = lin::invert(pair.m);
    } catch (const NumericError&) {
      continue;
    }
    const Matrix prod = lin::matmul(pair.m, pair.m_inv);
    if (lin::max_abs_diff(prod, Matrix::identity(d)) > kInverseTol) continue;
    if (condition_number(pair.m) > kConditionBound) continue;
    return pair;
  }
  throw NumericError("gen_mask: no well-conditioned mask after 8 attempts");
}

Matrix left_nullspace(const Matrix& m_left) {
  const std::size_t d = m_left.rows();
  const std::size_t k = m_left.cols();
  if (k >= d) throw ShapeError("left_nullspace: matrix has no left null space");

  // Orthonormal basis U of the column space, then complete it from the
  // standard basis; the completion spans the left null space.
  std::vector<std::vector<double>> basis;
  auto project_out = [&](std::vector<double>& x) {
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : basis) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += x[i] * u[i];
        for (std::size_t i = 0; i < d; ++i) x[i] -= dot * u[i];
      }
    }
  };
  auto norm_of = [&](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
  };

  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> col(d);
    for (std::size_t i = 0; i < d; ++i) col[i] = m_left(i, j);
    project_out(col);
    const double n = norm_of(col);
    if (n < 1e-12) {
      throw NumericError("left_nullspace: rank-deficient share matrix");
    }
    for (auto& v : col) v /= n;
    basis.push_back(std::move(col));
  }

  Matrix null(d, d - k);
  std::size_t found = 0;
  for (std::size_t e = 0; e < d && found < d - k; ++e) {
    std::vector<double> x(d, 0.0);
    x[e] = 1.0;
    project_out(x);
    const double n = norm_of(x);
    if (n < 1e-8) continue;
    for (auto& v : x) v /= n;
    for (std::size_t i = 0; i < d; ++i) null(i, found) = x[i];
    basis.push_back(std::move(x));
    ++found;
  }
  if (found != d - k) {
    throw NumericError("left_nullspace: failed to complete the basis");
  }
  return null;
}

void l2_normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double* row = m.data() + r * m.cols();
    const double norm = std::sqrt(kern::ops().sumsq(row, m.cols()));
    if (norm < 1e-300) {
      throw NumericError("l2_normalize: zero-norm row " + std::to_string(r));
    }
    kern::ops().scal(row, 1.0 / norm, m.cols());
  }
}

void l2_normalize(embed::EmbeddingMatrix& em) {
  for (std::size_t r = 0; r < em.values.rows(); ++r) {
    double* row = em.values.data() + r * em.values.cols();
    const double norm = std::sqrt(kern::ops().sumsq(row, em.values.cols()));
    if (norm < 1e-300) {
      throw NumericError("l2_normalize: degenerate embedding for patient '" +
                         em.patient_ids[r] + "'");
    }
    kern::ops().scal(row, 1.0 / norm, em.values.cols());
  }
}

Site1Shares make_site1_shares(const Matrix& a, const MaskPair& mask) {
  if (a.cols() != mask.dim) {
    throw ProtocolError("site1 shares: embedding dim does not match mask");
  }
  return {lin::matmul(a, mask.m_left()), lin::matmul(a, mask.m_right())};
}

Site2Shares make_site2_shares(const Matrix& b, const MaskPair& mask) {
  if (b.rows() != mask.dim) {
    throw ProtocolError("site2 shares: embedding dim does not match mask");
  }
  const Matrix masked = lin::matmul(mask.m_inv, b);
  const std::size_t half = mask.dim / 2;
  return {lin::slice_rows(masked, 0, half),
          lin::slice_rows(masked, half, mask.dim)};
}

Matrix secure_dot(const Matrix& a, const Matrix& b, const MaskPair& mask,
                  fed::Bus* bus, int site1, int site2,
                  const std::string& session) {
  if (a.cols() != mask.dim || b.rows() != mask.dim) {
    throw ProtocolError("secure_dot: dimension mismatch with mask (" +
                        std::to_string(a.cols()) + ", " +
                        std::to_string(b.rows()) + " vs " +
                        std::to_string(mask.dim) + ")");
  }
  using fed::MessageType;
  const std::string s1 = fed::site_address(site1);
  const std::string s2 = fed::site_address(site2);
  const char* server = fed::server_address();

  if (bus == nullptr) {
    const Site1Shares sh1 = make_site1_shares(a, mask);
    const Site2Shares sh2 = make_site2_shares(b, mask);
    Matrix v = lin::matmul(sh1.a2, sh2.b2);   // V_a at site 1
    const Matrix vb = lin::matmul(sh1.a1, sh2.b1);  // V_b at site 2
    kern::ops().axpy(v.data(), 1.0, vb.data(), v.size());
    return v;
  }

  // Step 1: server distributes the masks.
  bus->send({MessageType::kSmpcMask, server, s1, session, mask.m, ""});
  bus->send({MessageType::kSmpcMaskInv, server, s2, session, mask.m_inv, ""});

  // Steps 2-3: sites mask locally and transmit one half each.
  MaskPair m1;  // site 1 sees only M
  m1.dim = mask.dim;
  m1.m = std::get<Matrix>(bus->receive(s1, MessageType::kSmpcMask, session).payload);
  const Site1Shares sh1 = make_site1_shares(a, m1);
  bus->send({MessageType::kSmpcShareA1, s1, server, session, sh1.a1, ""});

  MaskPair m2;  // site 2 sees only M^-1
  m2.dim = mask.dim;
  m2.m_inv =
      std::get<Matrix>(bus->receive(s2, MessageType::kSmpcMaskInv, session).payload);
  const Site2Shares sh2 = make_site2_shares(b, m2);
  bus->send({MessageType::kSmpcShareB2, s2, server, session, sh2.b2, ""});

  // Step 4: server relays the transmitted halves across.
  Matrix a1 = std::get<Matrix>(
      bus->receive(server, MessageType::kSmpcShareA1, session).payload);
  Matrix b2 = std::get<Matrix>(
      bus->receive(server, MessageType::kSmpcShareB2, session).payload);
  bus->send({MessageType::kSmpcShareB2, server, s1, session, std::move(b2), ""});
  bus->send({MessageType::kSmpcShareA1, server, s2, session, std::move(a1), ""});

  // Step 5: site 1 computes V_a = A2 * B2.
  const Matrix b2_at_s1 = std::get<Matrix>(
      bus->receive(s1, MessageType::kSmpcShareB2, session).payload);
  bus->send({MessageType::kSmpcPartialVa, s1, server, session,
             lin::matmul(sh1.a2, b2_at_s1), ""});

  // Step 6: site 2 computes V_b = A1 * B1.
  const Matrix a1_at_s2 = std::get<Matrix>(
      bus->receive(s2, MessageType::kSmpcShareA1, session).payload);
  bus->send({MessageType::kSmpcPartialVb, s2, server, session,
             lin::matmul(a1_at_s2, sh2.b1), ""});

  // Server sums the partials.
  Matrix va = std::get<Matrix>(
      bus->receive(server, MessageType::kSmpcPartialVa, session).payload);
  const Matrix vb = std::get<Matrix>(
      bus->receive(server, MessageType::kSmpcPartialVb, session).payload);
  if (!va.same_shape(vb)) throw ProtocolError("secure_dot: partial shape mismatch");
  kern::ops().axpy(va.data(), 1.0, vb.data(), va.size());
  return va;
}

namespace {

void check_normalized(const embed::EmbeddingMatrix& em) {
  for (std::size_t r = 0; r < em.values.rows(); ++r) {
    const double* row = em.values.data() + r * em.values.cols();
    const double norm = std::sqrt(kern::ops().sumsq(row, em.values.cols()));
    if (std::fabs(norm - 1.0) > 1e-8) {
      throw ProtocolError("assemble_similarity: embeddings must be L2-normalized "
                          "(row norm " + std::to_string(norm) + " at site " +
                          std::to_string(em.site_id) + ")");
    }
  }
}

std::vector<const embed::EmbeddingMatrix*> sorted_sites(
    const std::vector<embed::EmbeddingMatrix>& embeddings) {
  std::vector<const embed::EmbeddingMatrix*> ptr;
  for (const auto& e : embeddings) ptr.push_back(&e);
  std::sort(ptr.begin(), ptr.end(),
            [](const auto* a, const auto* b) { return a->site_id < b->site_id; });
  return ptr;
}

SimilarityMatrix init_result(
    const std::vector<const embed::EmbeddingMatrix*>& sites) {
  SimilarityMatrix sim;
  std::size_t total = 0;
  for (const auto* e : sites) total += e->values.rows();
  sim.s = Matrix(total, total);
  sim.index.reserve(total);
  for (const auto* e : sites) {
    for (std::size_t r = 0; r < e->values.rows(); ++r) {
      sim.index.push_back(
          {e->site_id, static_cast<std::uint32_t>(r), e->patient_ids[r]});
    }
  }
  return sim;
}

void write_block(Matrix& s, std::size_t row0, std::size_t col0,
                 const Matrix& block, bool mirror) {
  for (std::size_t i = 0; i < block.rows(); ++i) {
    for (std::size_t j = 0; j < block.cols(); ++j) {
      s(row0 + i, col0 + j) = block(i, j);
      if (mirror) s(col0 + j, row0 + i) = block(i, j);
    }
  }
}

}  // namespace

SimilarityMatrix assemble_similarity(
    const std::vector<embed::EmbeddingMatrix>& embeddings, std::uint64_t seed,
    fed::Bus* bus, int workers) {
  if (embeddings.empty()) throw StateError("assemble_similarity: no embeddings");
  const std::size_t d = embeddings.front().values.cols();
  if (d % 2 != 0) {
    throw ShapeError("assemble_similarity: embedding dimension must be even");
  }
  for (const auto& e : embeddings) {
    if (e.values.cols() != d) {
      throw ShapeError("assemble_similarity: embedding dims differ across sites");
    }
    check_normalized(e);
  }

  const auto sites = sorted_sites(embeddings);
  SimilarityMatrix sim = init_result(sites);

  std::vector<std::size_t> offsets(sites.size());
  std::size_t acc = 0;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    offsets[i] = acc;
    acc += sites[i]->values.rows();
  }

  // Within-site blocks: local plaintext cosine similarities.
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const Matrix block = lin::matmul_nt(sites[i]->values, sites[i]->values);
    write_block(sim.s, offsets[i], offsets[i], block, false);
  }

  // Cross-site blocks: one independent mask pair per unordered site pair.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    for (std::size_t j = i + 1; j < sites.size(); ++j) pairs.emplace_back(i, j);
  }
  parallel_for_each(pairs.size(), workers, [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    const int si = sites[i]->site_id;
    const int sj = sites[j]->site_id;
    const MaskPair mask =
        gen_mask(d, rng::derive(seed, "mask", static_cast<std::uint64_t>(si),
                                static_cast<std::uint64_t>(sj)));
    const std::string session =
        "pair:" + std::to_string(si) + ":" + std::to_string(sj);
    // Site j holds its embeddings as columns for the session.
    const Matrix b = lin::transpose(sites[j]->values);
    const Matrix v = secure_dot(sites[i]->values, b, mask, bus, si, sj, session);
    write_block(sim.s, offsets[i], offsets[j], v, true);
  });
  return sim;
}

SimilarityMatrix assemble_similarity_plaintext(
    const std::vector<embed::EmbeddingMatrix>& embeddings) {
  if (embeddings.empty()) throw StateError("assemble_similarity: no embeddings");
  const auto sites = sorted_sites(embeddings);
  SimilarityMatrix sim = init_result(sites);

  Matrix pooled(sim.index.size(), sites.front()->values.cols());
  std::size_t row = 0;
  for (const auto* e : sites) {
    std::copy(e->values.data(), e->values.data() + e->values.size(),
              pooled.data() + row * pooled.cols());
    row += e->values.rows();
  }
  sim.s = lin::matmul_nt(pooled, pooled);
  return sim;
}

double rmse(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("rmse: shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

namespace {
constexpr char kSimMagic[8] = {'F', 'C', 'S', 'I', 'M', 'B', 'I', 'N'};
}

void save_similarity(const std::string& matrix_path,
                     const std::string& registry_path,
                     const SimilarityMatrix& sim) {
  std::ofstream out(matrix_path, std::ios::binary | std::ios::trunc);
  if (!out) throw StageError("similarity: cannot write " + matrix_path);
  out.write(kSimMagic, sizeof(kSimMagic));
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t n = sim.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (std::size_t i = 0; i < n; ++i) {
    out.write(reinterpret_cast<const char*>(sim.s.data() + i * n),
              static_cast<std::streamsize>((i + 1) * sizeof(double)));
  }
  if (!out) throw StageError("similarity: write failed for " + matrix_path);

  nlohmann::json j;
  j["format"] = "fedclust-similarity-registry";
  j["patients"] = nlohmann::json::array();
  for (const auto& p : sim.index) {
    j["patients"].push_back(
        {{"site_id", p.site_id}, {"row", p.row}, {"patient_id", p.patient_id}});
  }
  std::ofstream reg(registry_path, std::ios::trunc);
  if (!reg) throw StageError("similarity: cannot write " + registry_path);
  reg << j.dump() << "\n";
}

SimilarityMatrix load_similarity(const std::string& matrix_path,
                                 const std::string& registry_path) {
  std::ifstream in(matrix_path, std::ios::binary);
  if (!in) throw StageError("similarity: cannot open " + matrix_path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kSimMagic, sizeof(kSimMagic)) != 0) {
    throw ParseError("similarity: bad magic in " + matrix_path);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1) throw ParseError("similarity: unsupported version");
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  SimilarityMatrix sim;
  sim.s = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(sim.s.data() + i * n),
            static_cast<std::streamsize>((i + 1) * sizeof(double)));
    if (!in) throw ParseError("similarity: truncated triangle");
    for (std::size_t j = 0; j < i; ++j) sim.s(j, i) = sim.s(i, j);
  }

  std::ifstream reg(registry_path);
  if (!reg) throw StageError("similarity: cannot open " + registry_path);
  nlohmann::json j;
  try {
    reg >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("similarity registry: invalid JSON: " + std::string(e.what()));
  }
  for (const auto& p : j.at("patients")) {
    sim.index.push_back({p.at("site_id").get<int>(),
                         p.at("row").get<std::uint32_t>(),
                         p.at("patient_id").get<std::string>()});
  }
  if (sim.index.size() != n) {
    throw ParseError("similarity: registry size does not match matrix");
  }
  return sim;
}

}  // namespace fedclust::smpc
