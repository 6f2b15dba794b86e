#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "fedclust/errors.hpp"
#include "fedclust/predict/predict.hpp"
#include "fedclust/smpc/smpc.hpp"

using namespace fedclust;
using namespace fedclust::predict;
using fedclust::rng::Rng;

namespace {

cohort::FeatureSchema schema() {
  return {.n_diagnosis = 12, .n_drugs = 20, .n_physio = 6};
}

MultiHeadSpec tiny_spec() {
  MultiHeadSpec spec = MultiHeadSpec::for_schema(schema());
  spec.head_hidden = 8;
  spec.classifier_hidden = 6;
  return spec;
}

struct Fixture {
  std::vector<cohort::SiteDataset> sites;
  std::vector<cohort::SplitIndex> splits;
  SiteClusterLabels planted;
};

Fixture make_fixture(std::uint64_t seed, std::size_t n_sites = 3,
                     std::size_t per_site = 60) {
  cohort::CohortConfig config;
  config.n_sites = n_sites;
  config.patients_per_site = per_site;
  config.n_planted_groups = 3;
  config.seed = seed;
  Fixture f;
  f.sites = cohort::generate_synthetic(config, schema());
  cohort::normalize_01(f.sites, schema());
  for (std::size_t s = 0; s < f.sites.size(); ++s) {
    f.splits.push_back(cohort::split(f.sites[s], 0.7,
                                     rng::derive(seed, "split", s)));
    auto& labels = f.planted[f.sites[s].site_id];
    for (const auto& r : f.sites[s].records) {
      labels.push_back(static_cast<std::uint32_t>(r.planted_group));
    }
  }
  return f;
}

TrainContext make_ctx(const Fixture& f, std::uint64_t seed,
                      fed::RoundPlan plan = {2, 2, 32}) {
  static cohort::FeatureSchema s;
  s = schema();
  TrainContext ctx;
  ctx.sites = &f.sites;
  ctx.schema = &s;
  ctx.splits = &f.splits;
  ctx.spec = tiny_spec();
  ctx.plan = plan;
  ctx.seed = seed;
  return ctx;
}

// Pairwise-comparison AUC oracle, independent of the eval module.
double pairwise_auc(const std::vector<int>& y, const std::vector<double>& p) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        den += 1.0;
        if (p[i] > p[j]) num += 1.0;
        if (p[i] == p[j]) num += 0.5;
      }
    }
  }
  return den > 0.0 ? num / den : 0.5;
}

}  // namespace

TEST_CASE("regime names round-trip") {
  for (Regime r : {Regime::kSingleSite, Regime::kCentralized, Regime::kFedAvg,
                   Regime::kCbfl, Regime::kPcbfl}) {
    CHECK(parse_regime(regime_name(r)) == r);
  }
  CHECK_THROWS_AS(parse_regime("bogus"), ConfigError);
}

TEST_CASE("multihead structure: 5-wide heads, sigmoid output") {
  const auto spec = tiny_spec();
  const auto net = make_multihead(spec);
  for (const auto& h : net.heads) {
    CHECK(h.output_width() == 5);
  }
  CHECK(net.classifier.input_width() == 15);
  CHECK(net.classifier.output_width() == 1);
  CHECK(net.classifier.layers.back().activation == nn::Activation::kSigmoid);

  const auto layout = multihead_layout(net);
  CHECK(layout.blocks.size() == 16);  // 4 nets x 2 layers x (weights, bias)
  CHECK(layout.blocks[0].name == "head_diagnosis.layer0.weights");
  CHECK(multihead_flatten(net).size() == layout.total);
}

TEST_CASE("zero-weight multihead predicts exactly 0.5") {
  const auto spec = tiny_spec();
  MultiHeadNet net = make_multihead(spec);
  Rng rng(1);
  std::array<Matrix, 3> domains{Matrix(4, 12), Matrix(4, 20), Matrix(4, 6)};
  for (auto& d : domains) {
    for (auto& v : d.values()) v = rng.uniform(0.0, 1.0);
  }
  const Matrix probs = multihead_forward(net, domains);
  for (double v : probs.values()) CHECK(v == 0.5);
}

TEST_CASE("multihead analytic gradient matches finite differences") {
  MultiHeadSpec spec;
  spec.domain_widths = {4, 5, 3};
  spec.head_hidden = 3;
  spec.classifier_hidden = 4;
  MultiHeadNet net = make_multihead(spec);
  Rng rng(7);
  multihead_glorot(net, rng);

  std::array<Matrix, 3> domains{Matrix(6, 4), Matrix(6, 5), Matrix(6, 3)};
  for (auto& d : domains) {
    for (auto& v : d.values()) v = rng.uniform(0.1, 0.9);
  }
  Matrix y(6, 1);
  for (auto& v : y.values()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;

  std::vector<double> analytic;
  multihead_loss_grad(net, domains, y, &analytic);

  auto params = multihead_flatten(net);
  REQUIRE(analytic.size() == params.size());
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    multihead_unflatten(net, params);
    const double up = multihead_loss_grad(net, domains, y, nullptr);
    params[i] = orig - h;
    multihead_unflatten(net, params);
    const double down = multihead_loss_grad(net, domains, y, nullptr);
    params[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-4});
    worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
  }
  multihead_unflatten(net, params);
  CHECK(worst < 1e-4);
}

TEST_CASE("fedavg with one site equals single-site training, bit-exact") {
  const auto f = make_fixture(50, 1, 40);
  const auto ctx = make_ctx(f, 99);
  const auto fedavg = train_fedavg(ctx);
  const auto single = train_single_site(ctx);
  REQUIRE(single.size() == 1);
  CHECK(single[0].second == fedavg);
}

TEST_CASE("clustered training with k=1 is parameter-identical to fedavg") {
  const auto f = make_fixture(51, 3, 40);
  const auto ctx = make_ctx(f, 100);

  SiteClusterLabels all_zero;
  for (const auto& s : f.sites) {
    all_zero[s.site_id].assign(s.records.size(), 0);
  }
  const auto pcbfl = train_pcbfl(ctx, all_zero, 1);
  const auto fedavg = train_fedavg(ctx);
  REQUIRE(pcbfl.k == 1);
  CHECK(pcbfl.params[0] == fedavg);
}

TEST_CASE("per-cluster weights follow sample counts (10 vs 30 -> 0.25/0.75)") {
  // The per-cluster aggregation law train_clustered feeds into run_federated.
  std::vector<double> v1{2.0, -4.0};
  std::vector<double> v2{6.0, 8.0};
  const auto agg = fed::aggregate_weighted({{0, 10.0, v1}, {1, 30.0, v2}});
  CHECK(agg[0] == doctest::Approx(0.25 * 2.0 + 0.75 * 6.0).epsilon(1e-15));
  CHECK(agg[1] == doctest::Approx(0.25 * -4.0 + 0.75 * 8.0).epsilon(1e-15));
}

TEST_CASE("an empty cluster raises an error naming it") {
  const auto f = make_fixture(52, 2, 30);
  const auto ctx = make_ctx(f, 101);
  SiteClusterLabels labels;
  for (const auto& s : f.sites) {
    labels[s.site_id].assign(s.records.size(), 0);  // nothing in cluster 1 or 2
  }
  try {
    train_pcbfl(ctx, labels, 3);
    FAIL("expected StateError");
  } catch (const StateError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('1') != std::string::npos);
    CHECK(msg.find('2') != std::string::npos);
  }
}

TEST_CASE("all regimes emit probabilities strictly inside (0,1)") {
  const auto f = make_fixture(53, 2, 40);
  const auto ctx = make_ctx(f, 102);

  const auto fedavg = train_fedavg(ctx);
  const auto central = train_centralized(ctx);
  const auto pcbfl = train_pcbfl(ctx, f.planted, 3);

  for (std::size_t s = 0; s < f.sites.size(); ++s) {
    const auto& rows = f.splits[s].test;
    for (const auto& params : {fedavg, central}) {
      const auto probs = predict_probs(ctx.spec, params, f.sites[s], rows);
      for (double p : probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
      }
    }
    const auto probs =
        predict_clustered(ctx.spec, pcbfl, f.sites[s], rows, f.planted);
    for (double p : probs) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("prediction is deterministic and repeatable") {
  const auto f = make_fixture(54, 2, 30);
  const auto ctx = make_ctx(f, 103);
  const auto params = train_fedavg(ctx);
  const auto a = predict_probs(ctx.spec, params, f.sites[0], f.splits[0].test);
  const auto b = predict_probs(ctx.spec, params, f.sites[0], f.splits[0].test);
  CHECK(a == b);

  const auto params2 = train_fedavg(ctx);
  CHECK(params == params2);
}

TEST_CASE("missing cluster assignment is an error") {
  const auto f = make_fixture(55, 2, 30);
  const auto ctx = make_ctx(f, 104);
  const auto pcbfl = train_pcbfl(ctx, f.planted, 3);
  SiteClusterLabels missing = f.planted;
  missing.erase(f.sites[0].site_id);
  CHECK_THROWS_AS(predict_clustered(ctx.spec, pcbfl, f.sites[0],
                                    f.splits[0].test, missing),
                  StateError);
}

TEST_CASE("cbfl separates two sites with disjoint planted groups") {
  // Construct embeddings directly: site 0's patients near +e1, site 1's near
  // +e2, so site means separate and nearest-centroid assignment is clean.
  Rng rng(9);
  std::vector<embed::EmbeddingMatrix> ems;
  for (int site = 0; site < 2; ++site) {
    embed::EmbeddingMatrix em;
    em.site_id = site;
    em.values = Matrix(30, 4);
    for (std::size_t i = 0; i < 30; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        em.values(i, j) =
            (j == static_cast<std::size_t>(site) ? 2.0 : 0.0) + 0.2 * rng.normal();
      }
      em.patient_ids.push_back("p" + std::to_string(i));
    }
    smpc::l2_normalize(em);
    ems.push_back(std::move(em));
  }

  const auto f = make_fixture(56, 2, 30);
  auto ctx = make_ctx(f, 105);
  fed::Bus bus;
  ctx.bus = &bus;
  bus.set_phase("train");
  const auto result = train_cbfl(ctx, ems, 2);

  // Each site's patients predominantly take one cluster, different per site.
  std::array<std::array<std::size_t, 2>, 2> counts{};
  for (int site = 0; site < 2; ++site) {
    for (auto l : result.labels.at(site)) counts[site][l]++;
  }
  const double frac0 =
      static_cast<double>(std::max(counts[0][0], counts[0][1])) / 30.0;
  const double frac1 =
      static_cast<double>(std::max(counts[1][0], counts[1][1])) / 30.0;
  CHECK(frac0 > 0.9);
  CHECK(frac1 > 0.9);
  const auto majority0 = counts[0][0] > counts[0][1] ? 0 : 1;
  const auto majority1 = counts[1][0] > counts[1][1] ? 0 : 1;
  CHECK(majority0 != majority1);

  // Bus audit: sites reveal mean embeddings and parameters, nothing else.
  const auto types = bus.types_from_sites();
  const std::set<fed::MessageType> allowed{fed::MessageType::kSiteMeanEmbedding,
                                           fed::MessageType::kParameters};
  CHECK(types == allowed);
  std::size_t mean_messages = 0;
  for (const auto& r : bus.log()) {
    if (r.type == fed::MessageType::kSiteMeanEmbedding) ++mean_messages;
  }
  CHECK(mean_messages == 2);  // exactly C mean vectors
}

TEST_CASE("cbfl whole-site assignment puts each site wholly in one cluster") {
  Rng rng(10);
  std::vector<embed::EmbeddingMatrix> ems;
  for (int site = 0; site < 2; ++site) {
    embed::EmbeddingMatrix em;
    em.site_id = site;
    em.values = Matrix(30, 4);
    for (std::size_t i = 0; i < 30; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        em.values(i, j) = (j == static_cast<std::size_t>(site) ? 2.0 : 0.0) +
                          0.2 * rng.normal();
      }
      em.patient_ids.push_back("p" + std::to_string(i));
    }
    smpc::l2_normalize(em);
    ems.push_back(std::move(em));
  }
  const auto f = make_fixture(57, 2, 30);
  const auto ctx = make_ctx(f, 106);
  const auto result = train_cbfl(ctx, ems, 2, /*whole_site=*/true);
  for (int site = 0; site < 2; ++site) {
    const auto& labels = result.labels.at(site);
    for (auto l : labels) CHECK(l == labels[0]);
  }
}

TEST_CASE("multihead forward matches an explicit head-by-head composition") {
  MultiHeadSpec spec;
  spec.domain_widths = {3, 4, 2};
  spec.head_hidden = 4;
  spec.classifier_hidden = 3;
  MultiHeadNet net = make_multihead(spec);
  Rng rng(31);
  multihead_glorot(net, rng);

  std::array<Matrix, 3> domains{Matrix(2, 3), Matrix(2, 4), Matrix(2, 2)};
  for (auto& d : domains) {
    for (auto& v : d.values()) v = rng.uniform(0.0, 1.0);
  }
  const Matrix probs = multihead_forward(net, domains);

  // Oracle: run each head through nn::predict, concatenate by hand, then the
  // classifier.
  Matrix concat(2, 15);
  for (std::size_t d = 0; d < 3; ++d) {
    const Matrix h = nn::predict(net.heads[d], domains[d]);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t j = 0; j < 5; ++j) concat(r, d * 5 + j) = h(r, j);
    }
  }
  const Matrix expect = nn::predict(net.classifier, concat);
  CHECK(lin::max_abs_diff(probs, expect) == 0.0);
}

TEST_CASE("cbfl on identically distributed sites is a well-defined smoke case") {
  // Site means nearly coincide; the assignment is reported, with no fixed
  // expectation on its agreement with anything.
  Rng rng(13);
  std::vector<embed::EmbeddingMatrix> ems;
  for (int site = 0; site < 3; ++site) {
    embed::EmbeddingMatrix em;
    em.site_id = site;
    em.values = Matrix(40, 4);
    for (auto& v : em.values.values()) v = 0.5 + 0.1 * rng.normal();
    for (std::size_t i = 0; i < 40; ++i) em.patient_ids.push_back("p");
    ems.push_back(std::move(em));
  }
  const auto labels = cbfl_assign(ems, 2, 5);
  REQUIRE(labels.size() == 3);
  double mean_dist = 0.0;
  for (int a = 0; a < 3; ++a) {
    for (int b_site = a + 1; b_site < 3; ++b_site) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < 40; ++i) {
          ma += ems[a].values(i, j);
          mb += ems[b_site].values(i, j);
        }
        const double diff = (ma - mb) / 40.0;
        d2 += diff * diff;
      }
      mean_dist += std::sqrt(d2);
    }
  }
  CHECK(mean_dist / 3.0 < 0.15);  // site means nearly coincide
  for (const auto& [site, v] : labels) CHECK(v.size() == 40);
}

TEST_CASE("cbfl rejects k above the site count") {
  const auto f = make_fixture(58, 2, 20);
  const auto ctx = make_ctx(f, 107);
  std::vector<embed::EmbeddingMatrix> ems(2);
  CHECK_THROWS_AS(train_cbfl(ctx, ems, 5), ConfigError);
}

TEST_CASE("clustered models beat the global model within each planted cluster") {
  // The severity signal is spread across the full-width count domains, so
  // this comparison runs on the default schema at a reduced site count.
  static cohort::FeatureSchema full_schema;
  full_schema = cohort::FeatureSchema{};
  cohort::CohortConfig config;
  config.n_sites = 16;
  config.patients_per_site = 250;
  config.seed = 59;
  Fixture f;
  f.sites = cohort::generate_synthetic(config, full_schema);
  cohort::normalize_01(f.sites, full_schema);
  for (std::size_t s = 0; s < f.sites.size(); ++s) {
    f.splits.push_back(cohort::split(f.sites[s], 0.7, rng::derive(59, "split", s)));
    auto& labels = f.planted[f.sites[s].site_id];
    for (const auto& r : f.sites[s].records) {
      labels.push_back(static_cast<std::uint32_t>(r.planted_group));
    }
  }
  TrainContext ctx;
  ctx.sites = &f.sites;
  ctx.schema = &full_schema;
  ctx.splits = &f.splits;
  ctx.spec = MultiHeadSpec::for_schema(full_schema);
  ctx.plan = {8, 5, 32};
  ctx.seed = 108;
  ctx.workers = 2;

  const auto pcbfl = train_pcbfl(ctx, f.planted, 3);
  const auto fedavg = train_fedavg(ctx);

  for (std::uint32_t c = 0; c < 3; ++c) {
    std::vector<int> y;
    std::vector<double> p_clustered, p_global;
    for (std::size_t s = 0; s < f.sites.size(); ++s) {
      const auto& labels = f.planted.at(f.sites[s].site_id);
      std::vector<std::uint32_t> rows;
      for (std::uint32_t r : f.splits[s].test) {
        if (labels[r] == c) rows.push_back(r);
      }
      if (rows.empty()) continue;
      const auto pc =
          predict_clustered(ctx.spec, pcbfl, f.sites[s], rows, f.planted);
      const auto pg = predict_probs(ctx.spec, fedavg, f.sites[s], rows);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        y.push_back(f.sites[s].records[rows[i]].mortality);
        p_clustered.push_back(pc[i]);
        p_global.push_back(pg[i]);
      }
    }
    const double auc_clustered = pairwise_auc(y, p_clustered);
    const double auc_global = pairwise_auc(y, p_global);
    CHECK(auc_clustered > auc_global);
  }
}

TEST_CASE("prediction rows round-trip through csv") {
  std::vector<PredictionRow> rows;
  rows.push_back({"p1", 3, 2, 1, 0.87654321, "pcbfl", 42});
  rows.push_back({"p2", 3, -1, 0, 1e-9, "fedavg", 42});
  const auto dir = std::filesystem::temp_directory_path() / "fedclust_predict";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "preds.csv").string();
  export_predictions_csv(path, rows);
  const auto back = import_predictions_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].patient_id == "p1");
  CHECK(back[0].cluster == 2);
  CHECK(back[0].y_prob == 0.87654321);
  CHECK(back[1].regime == "fedavg");
  CHECK(back[1].cluster == -1);
  std::filesystem::remove_all(dir);
}
