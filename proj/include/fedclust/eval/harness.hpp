#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedclust/cohort/cohort.hpp"
#include "fedclust/embed/embed.hpp"
#include "fedclust/eval/metrics.hpp"
#include "fedclust/predict/predict.hpp"

namespace fedclust::eval {

// ---- cluster characterization ---------------------------------------------------

struct ClusterStats {
  std::size_t k = 0;
  std::vector<double> cluster_sizes;
  std::vector<double> mortality_rate;       // per cluster
  Matrix physio_means;                      // k x n_physio
  std::vector<double> physio_f;             // per physio feature
  std::vector<double> physio_p;
  std::vector<bool> physio_significant;     // Bonferroni at 0.05
  double region_chi2 = 0.0;
  double region_p = 1.0;
  std::size_t region_dof = 0;
};

// One-way ANOVA per physio feature across clusters, Bonferroni-adjusted
// significance, and a chi-squared test of region against cluster.
ClusterStats cluster_stats(const std::vector<cohort::SiteDataset>& sites,
                           const cohort::FeatureSchema& schema,
                           const predict::SiteClusterLabels& labels,
                           std::size_t k);

// ---- per-repetition evaluation ----------------------------------------------------

struct ScopeMetrics {
  std::string scope;  // "site:3", "cell:3:1", "global"
  double auc = 0.0;
  double auprc = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_positives = 0;
  bool defined = false;
};

enum class GlobalRule {
  kPerSite,   // Eq. (2): weight per-site metrics by site sample counts
  kPerCell,   // Eq. (3): weight per-(site,cluster) metrics by cell counts
  kPooled,    // single pooled computation (centralized comparator)
};

struct RegimeEvaluation {
  std::string regime;
  GlobalRule rule = GlobalRule::kPerSite;
  std::vector<ScopeMetrics> per_site;
  std::vector<ScopeMetrics> per_cell;
  double global_auc = 0.0;
  double global_auprc = 0.0;
};

// Evaluate one regime's test predictions for one repetition. Per-site values
// for clustered regimes are the within-site cell-weighted means.
RegimeEvaluation evaluate_rows(const std::vector<predict::PredictionRow>& rows,
                               GlobalRule rule);

// ---- repetition harness -------------------------------------------------------------

struct HarnessConfig {
  std::vector<predict::Regime> regimes{
      predict::Regime::kSingleSite, predict::Regime::kCentralized,
      predict::Regime::kFedAvg, predict::Regime::kCbfl, predict::Regime::kPcbfl};
  std::size_t repetitions = 100;
  fed::RoundPlan plan{20, 10, 32};
  double split_ratio = 0.7;
  std::size_t bootstrap_resamples = 1000;
  predict::MultiHeadSpec spec;
  std::uint64_t seed = 0;
  int workers = 1;
  // When set, each repetition writes its prediction dump CSV here.
  std::string dump_dir;
  // Optional message bus: training parameters and per-site metric reports
  // travel through it for the audit log.
  fed::Bus* bus = nullptr;
};

struct RegimeSummary {
  std::string regime;
  std::vector<double> rep_auc;    // one global value per repetition
  std::vector<double> rep_auprc;
  double mean_auc = 0.0;
  double mean_auprc = 0.0;
  std::pair<double, double> auc_ci{0.0, 0.0};
  std::pair<double, double> auprc_ci{0.0, 0.0};
  std::map<int, double> site_mean_auc;   // per-site mean across repetitions
  std::map<int, double> site_mean_auprc;
};

struct HarnessResult {
  std::vector<RegimeSummary> regimes;
  std::map<std::string, int> best_site_count_auc;    // regimes x sites won
  std::map<std::string, int> best_site_count_auprc;  // (centralized excluded)

  const RegimeSummary& summary(const std::string& regime) const;
};

// Runs `repetitions` independent 70:30 splits; per repetition trains every
// requested regime and records its global weighted metrics. The clustering
// assignments are fixed inputs (patients are clustered before any split);
// model training re-randomizes per repetition.
HarnessResult run_comparison(
    const std::vector<cohort::SiteDataset>& sites,
    const cohort::FeatureSchema& schema,
    const predict::SiteClusterLabels& pcbfl_labels, std::size_t pcbfl_k,
    const std::optional<predict::SiteClusterLabels>& cbfl_labels,
    const HarnessConfig& config);

}  // namespace fedclust::eval
