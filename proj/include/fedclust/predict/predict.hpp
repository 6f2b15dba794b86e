#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedclust/cluster/cluster.hpp"
#include "fedclust/cohort/cohort.hpp"
#include "fedclust/embed/embed.hpp"
#include "fedclust/fed/bus.hpp"
#include "fedclust/fed/fedavg.hpp"
#include "fedclust/nn/net.hpp"
#include "fedclust/smpc/smpc.hpp"

namespace fedclust::predict {

enum class Regime : std::uint8_t {
  kSingleSite = 0,
  kCentralized,
  kFedAvg,
  kCbfl,
  kPcbfl,
};

const char* regime_name(Regime r);
Regime parse_regime(const std::string& name);

// Three input heads (one per feature domain, each ending in a 5-wide
// representation) concatenated into a classification module with a single
// sigmoid output.
struct MultiHeadSpec {
  std::array<std::size_t, 3> domain_widths{};
  std::size_t head_hidden = 32;
  std::size_t head_out = 5;
  std::size_t classifier_hidden = 16;

  void validate() const;
  static MultiHeadSpec for_schema(const cohort::FeatureSchema& schema);
};

struct MultiHeadNet {
  MultiHeadSpec spec;
  std::array<nn::DenseNet, 3> heads;
  nn::DenseNet classifier;
};

MultiHeadNet make_multihead(const MultiHeadSpec& spec);
nn::ParamLayout multihead_layout(const MultiHeadNet& net);
std::vector<double> multihead_flatten(const MultiHeadNet& net);
void multihead_unflatten(MultiHeadNet& net, std::span<const double> params);
void multihead_glorot(MultiHeadNet& net, rng::Rng& rng);

// Probabilities for a batch given as per-domain matrices.
Matrix multihead_forward(const MultiHeadNet& net,
                         const std::array<Matrix, 3>& domains);

// Mean BCE loss and its flat gradient.
double multihead_loss_grad(const MultiHeadNet& net,
                           const std::array<Matrix, 3>& domains,
                           const Matrix& targets, std::vector<double>* grad_out);

// ---- training regimes --------------------------------------------------------

// Cluster labels per site, row-aligned with each site's records.
using SiteClusterLabels = std::map<int, std::vector<std::uint32_t>>;

SiteClusterLabels split_assignment(const std::vector<smpc::PatientRef>& index,
                                   const std::vector<std::uint32_t>& labels);

struct TrainContext {
  const std::vector<cohort::SiteDataset>* sites = nullptr;  // normalized
  const cohort::FeatureSchema* schema = nullptr;
  const std::vector<cohort::SplitIndex>* splits = nullptr;  // aligned to sites
  MultiHeadSpec spec;
  fed::RoundPlan plan;
  std::uint64_t seed = 0;
  fed::Bus* bus = nullptr;
  int workers = 1;

  void validate() const;
};

struct ClusterModelSet {
  std::size_t k = 0;
  std::vector<std::vector<double>> params;  // one parameter vector per cluster
};

// One independent federated run per cluster; site c contributes its cluster-k
// training patients with aggregation weight n_ck / N_k. A cluster with no
// training patients anywhere is an error naming the cluster.
ClusterModelSet train_clustered(const TrainContext& ctx,
                                const SiteClusterLabels& labels, std::size_t k);

ClusterModelSet train_pcbfl(const TrainContext& ctx,
                            const SiteClusterLabels& labels, std::size_t k);

struct CbflResult {
  ClusterModelSet models;
  SiteClusterLabels labels;
};

// CBFL's clustering step alone: sites reveal only their mean embedding, the
// coordinator k-means them, centroids broadcast, patients assigned to the
// nearest centroid (or the whole site to its site's cluster when whole_site
// is set).
SiteClusterLabels cbfl_assign(const std::vector<embed::EmbeddingMatrix>& embeddings,
                              std::size_t k, std::uint64_t seed,
                              bool whole_site = false, fed::Bus* bus = nullptr,
                              int workers = 1);

// CBFL comparator: cbfl_assign followed by clustered federated training.
CbflResult train_cbfl(const TrainContext& ctx,
                      const std::vector<embed::EmbeddingMatrix>& embeddings,
                      std::size_t k, bool whole_site = false);

std::vector<double> train_fedavg(const TrainContext& ctx);
// One independent model per site, same total epoch budget.
std::vector<std::pair<int, std::vector<double>>> train_single_site(
    const TrainContext& ctx);
std::vector<double> train_centralized(const TrainContext& ctx);

// ---- prediction ----------------------------------------------------------------

// Deterministic forward pass over the listed rows of a site.
std::vector<double> predict_probs(const MultiHeadSpec& spec,
                                  const std::vector<double>& params,
                                  const cohort::SiteDataset& site,
                                  const std::vector<std::uint32_t>& rows);

// Clustered regimes select each patient's model by its assignment; a missing
// assignment is an error.
std::vector<double> predict_clustered(const MultiHeadSpec& spec,
                                      const ClusterModelSet& models,
                                      const cohort::SiteDataset& site,
                                      const std::vector<std::uint32_t>& rows,
                                      const SiteClusterLabels& labels);

// Per-patient prediction dump consumed by the evaluation module.
struct PredictionRow {
  std::string patient_id;
  int site_id = 0;
  int cluster = -1;  // -1 for unclustered regimes
  int y_true = 0;
  double y_prob = 0.0;
  std::string regime;
  std::uint64_t seed = 0;
};

void export_predictions_csv(const std::string& path,
                            const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> import_predictions_csv(const std::string& path);

}  // namespace fedclust::predict
