#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fedclust/linalg/matrix.hpp"

namespace fedclust::eval {

// Mann-Whitney rank formulation with midranks for ties. Throws MetricError
// when only one class is present.
double auc(const std::vector<int>& y_true, const std::vector<double>& y_prob);

// Average precision over descending-score prefixes with ties grouped.
// Throws MetricError when no positives are present.
double auprc(const std::vector<int>& y_true, const std::vector<double>& y_prob);

using MetricFn =
    std::function<double(const std::vector<int>&, const std::vector<double>&)>;

// Percentile bootstrap (with replacement); resamples on which the metric is
// undefined are redrawn within a 10x draw budget.
std::pair<double, double> bootstrap_ci(const std::vector<int>& y_true,
                                       const std::vector<double>& y_prob,
                                       const MetricFn& metric,
                                       std::size_t n_resamples = 1000,
                                       double level = 0.95,
                                       std::uint64_t seed = 0);

// Percentile bootstrap of the mean of a value vector (used for the
// 100-repetition summaries).
std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& values,
                                            std::size_t n_resamples = 1000,
                                            double level = 0.95,
                                            std::uint64_t seed = 0);

// Sample-size weighted mean over (metric, n) cells; weights n/N sum to one.
// Cells with undefined metrics are simply not passed in, which redistributes
// their weight proportionally.
double global_weighted(const std::vector<std::pair<double, double>>& cells);

struct AnovaResult {
  double f = 0.0;
  double p = 1.0;
};

// One-way ANOVA; p from the F distribution via the regularized incomplete
// beta function.
AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups);

struct Chi2Result {
  double statistic = 0.0;
  double p = 1.0;
  std::size_t dof = 0;
};

// Pearson chi-squared independence test on a contingency table of counts.
Chi2Result chi2_independence(const Matrix& table);

// flags[i] = p_values[i] < alpha / m
std::vector<bool> bonferroni(const std::vector<double>& p_values,
                             double alpha = 0.05);

}  // namespace fedclust::eval
