#include "fedclust/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedclust/errors.hpp"
#include "fedclust/eval/special.hpp"
#include "fedclust/rand/rng.hpp"

namespace fedclust::eval {

double auc(const std::vector<int>& y_true, const std::vector<double>& y_prob) {
  if (y_true.size() != y_prob.size() || y_true.empty()) {
    throw ShapeError("auc: labels and scores must be equal-length, non-empty");
  }
  const std::size_t n = y_true.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return y_prob[a] < y_prob[b];
  });

  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && y_prob[order[j + 1]] == y_prob[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = midrank;
    i = j + 1;
  }

  double rank_pos = 0.0;
  double n_pos = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (y_true[t] == 1) {
      rank_pos += rank[t];
      n_pos += 1.0;
    }
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) {
    throw MetricError("auc: undefined with a single class");
  }
  return (rank_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double auprc(const std::vector<int>& y_true, const std::vector<double>& y_prob) {
  if (y_true.size() != y_prob.size() || y_true.empty()) {
    throw ShapeError("auprc: labels and scores must be equal-length, non-empty");
  }
  const std::size_t n = y_true.size();
  double n_pos = 0.0;
  for (int y : y_true) n_pos += y == 1 ? 1.0 : 0.0;
  if (n_pos == 0.0) throw MetricError("auprc: undefined without positives");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return y_prob[a] > y_prob[b];
  });

  double ap = 0.0;
  double tp = 0.0;
  double seen = 0.0;
  double prev_recall = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && y_prob[order[j + 1]] == y_prob[order[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) {
      seen += 1.0;
      if (y_true[order[t]] == 1) tp += 1.0;
    }
    const double recall = tp / n_pos;
    const double precision = tp / seen;
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return ap;
}

std::pair<double, double> bootstrap_ci(const std::vector<int>& y_true,
                                       const std::vector<double>& y_prob,
                                       const MetricFn& metric,
                                       std::size_t n_resamples, double level,
                                       std::uint64_t seed) {
  if (y_true.size() != y_prob.size() || y_true.empty()) {
    throw ShapeError("bootstrap_ci: bad inputs");
  }
  if (n_resamples < 1) throw ConfigError("bootstrap_ci: need resamples");
  const std::size_t n = y_true.size();
  rng::Rng rng(seed);
  std::vector<double> values;
  values.reserve(n_resamples);
  std::vector<int> ry(n);
  std::vector<double> rp(n);

  const std::size_t budget = 10 * n_resamples;
  std::size_t draws = 0;
  while (values.size() < n_resamples && draws < budget) {
    ++draws;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pick = rng.uniform_int(n);
      ry[i] = y_true[pick];
      rp[i] = y_prob[pick];
    }
    try {
      values.push_back(metric(ry, rp));
    } catch (const MetricError&) {
      // undefined on this resample; redraw
    }
  }
  if (values.size() < n_resamples) {
    throw MetricError("bootstrap_ci: metric undefined on too many resamples");
  }
  std::sort(values.begin(), values.end());
  const double alpha = (1.0 - level) / 2.0;
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  return {quantile(alpha), quantile(1.0 - alpha)};
}

std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& values,
                                            std::size_t n_resamples,
                                            double level, std::uint64_t seed) {
  if (values.empty()) throw ShapeError("bootstrap_mean_ci: empty input");
  rng::Rng rng(seed);
  std::vector<double> means;
  means.reserve(n_resamples);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      acc += values[rng.uniform_int(values.size())];
    }
    means.push_back(acc / static_cast<double>(values.size()));
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - level) / 2.0;
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return means[lo] * (1.0 - frac) + means[hi] * frac;
  };
  return {quantile(alpha), quantile(1.0 - alpha)};
}

double global_weighted(const std::vector<std::pair<double, double>>& cells) {
  if (cells.empty()) throw MetricError("global_weighted: no defined cells");
  double total = 0.0;
  for (const auto& [metric, n] : cells) {
    if (n < 0.0) throw MetricError("global_weighted: negative weight");
    total += n;
  }
  if (total <= 0.0) throw MetricError("global_weighted: zero total weight");
  double acc = 0.0;
  double weight_sum = 0.0;
  for (const auto& [metric, n] : cells) {
    const double w = n / total;
    weight_sum += w;
    acc += w * metric;
  }
  if (std::fabs(weight_sum - 1.0) > 1e-12) {
    throw NumericError("global_weighted: weights failed to sum to 1");
  }
  return acc;
}

AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw MetricError("anova: need at least 2 groups");
  double n_total = 0.0;
  double grand_sum = 0.0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw MetricError("anova: each group needs >= 2 values");
    for (double v : g) {
      grand_sum += v;
      n_total += 1.0;
    }
  }
  const double grand_mean = grand_sum / n_total;

  double ss_between = 0.0;
  double ss_within = 0.0;
  for (const auto& g : groups) {
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= static_cast<double>(g.size());
    ss_between += static_cast<double>(g.size()) * (mean - grand_mean) *
                  (mean - grand_mean);
    for (double v : g) ss_within += (v - mean) * (v - mean);
  }
  const double df_between = static_cast<double>(groups.size()) - 1.0;
  const double df_within = n_total - static_cast<double>(groups.size());

  if (ss_within == 0.0 && ss_between == 0.0) {
    throw MetricError("anova: undefined F (no variance at all)");
  }
  AnovaResult result;
  if (ss_within == 0.0) {
    result.f = std::numeric_limits<double>::infinity();
    result.p = 0.0;
    return result;
  }
  result.f = (ss_between / df_between) / (ss_within / df_within);
  result.p = f_distribution_sf(result.f, df_between, df_within);
  return result;
}

Chi2Result chi2_independence(const Matrix& table) {
  const std::size_t r = table.rows();
  const std::size_t c = table.cols();
  if (r < 2 || c < 2) throw MetricError("chi2: table must be at least 2x2");

  std::vector<double> row_sum(r, 0.0), col_sum(c, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double v = table(i, j);
      if (v < 0.0) throw MetricError("chi2: negative count");
      row_sum[i] += v;
      col_sum[j] += v;
      total += v;
    }
  }
  for (double v : row_sum) {
    if (v == 0.0) throw MetricError("chi2: degenerate table (zero row marginal)");
  }
  for (double v : col_sum) {
    if (v == 0.0) throw MetricError("chi2: degenerate table (zero column marginal)");
  }

  Chi2Result result;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double expected = row_sum[i] * col_sum[j] / total;
      const double diff = table(i, j) - expected;
      result.statistic += diff * diff / expected;
    }
  }
  result.dof = (r - 1) * (c - 1);
  result.p = chi2_sf(result.statistic, static_cast<double>(result.dof));
  return result;
}

std::vector<bool> bonferroni(const std::vector<double>& p_values, double alpha) {
  if (p_values.empty()) throw MetricError("bonferroni: no tests");
  const double threshold = alpha / static_cast<double>(p_values.size());
  std::vector<bool> flags(p_values.size());
  for (std::size_t i = 0; i < p_values.size(); ++i) {
    flags[i] = p_values[i] < threshold;
  }
  return flags;
}

}  // namespace fedclust::eval
