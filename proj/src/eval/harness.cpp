#include "fedclust/eval/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>

#include "fedclust/errors.hpp"
#include "fedclust/parallel.hpp"

namespace fedclust::eval {

ClusterStats cluster_stats(const std::vector<cohort::SiteDataset>& sites,
                           const cohort::FeatureSchema& schema,
                           const predict::SiteClusterLabels& labels,
                           std::size_t k) {
  if (k < 1) throw ConfigError("cluster_stats: k must be >= 1");
  ClusterStats stats;
  stats.k = k;
  stats.cluster_sizes.assign(k, 0.0);
  stats.mortality_rate.assign(k, 0.0);
  stats.physio_means = Matrix(k, schema.n_physio);

  // Per-cluster groups of each physio feature, and region x cluster counts.
  std::vector<std::vector<std::vector<double>>> groups(
      schema.n_physio, std::vector<std::vector<double>>(k));
  Matrix region_counts(4, k);

  for (const auto& site : sites) {
    const auto it = labels.find(site.site_id);
    if (it == labels.end() || it->second.size() != site.records.size()) {
      throw StateError("cluster_stats: assignment does not cover site " +
                       std::to_string(site.site_id));
    }
    for (std::size_t r = 0; r < site.records.size(); ++r) {
      const auto c = it->second[r];
      if (c >= k) throw StateError("cluster_stats: label out of range");
      const auto& rec = site.records[r];
      stats.cluster_sizes[c] += 1.0;
      stats.mortality_rate[c] += rec.mortality;
      region_counts(static_cast<std::size_t>(rec.region), c) += 1.0;
      for (std::size_t j = 0; j < schema.n_physio; ++j) {
        stats.physio_means(c, j) += rec.physio[j];
        groups[j][c].push_back(rec.physio[j]);
      }
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (stats.cluster_sizes[c] > 0.0) {
      stats.mortality_rate[c] /= stats.cluster_sizes[c];
      for (std::size_t j = 0; j < schema.n_physio; ++j) {
        stats.physio_means(c, j) /= stats.cluster_sizes[c];
      }
    }
  }

  for (std::size_t j = 0; j < schema.n_physio; ++j) {
    std::vector<std::vector<double>> nonempty;
    for (auto& g : groups[j]) {
      if (g.size() >= 2) nonempty.push_back(std::move(g));
    }
    if (nonempty.size() < 2) {
      stats.physio_f.push_back(0.0);
      stats.physio_p.push_back(1.0);
      continue;
    }
    const auto result = anova_oneway(nonempty);
    stats.physio_f.push_back(result.f);
    stats.physio_p.push_back(result.p);
  }
  stats.physio_significant = bonferroni(stats.physio_p, 0.05);

  // Drop empty clusters/regions from the contingency table.
  std::vector<std::size_t> keep_rows, keep_cols;
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += region_counts(i, c);
    if (sum > 0.0) keep_rows.push_back(i);
  }
  for (std::size_t c = 0; c < k; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 4; ++i) sum += region_counts(i, c);
    if (sum > 0.0) keep_cols.push_back(c);
  }
  if (keep_rows.size() >= 2 && keep_cols.size() >= 2) {
    Matrix table(keep_rows.size(), keep_cols.size());
    for (std::size_t i = 0; i < keep_rows.size(); ++i) {
      for (std::size_t c = 0; c < keep_cols.size(); ++c) {
        table(i, c) = region_counts(keep_rows[i], keep_cols[c]);
      }
    }
    const auto chi = chi2_independence(table);
    stats.region_chi2 = chi.statistic;
    stats.region_p = chi.p;
    stats.region_dof = chi.dof;
  }
  return stats;
}

namespace {

ScopeMetrics metrics_for(const std::string& scope, const std::vector<int>& y,
                         const std::vector<double>& p) {
  ScopeMetrics m;
  m.scope = scope;
  m.n_samples = y.size();
  for (int v : y) m.n_positives += v == 1 ? 1 : 0;
  try {
    m.auc = auc(y, p);
    m.auprc = auprc(y, p);
    m.defined = true;
  } catch (const MetricError&) {
    m.defined = false;
  }
  return m;
}

}  // namespace

RegimeEvaluation evaluate_rows(const std::vector<predict::PredictionRow>& rows,
                               GlobalRule rule) {
  if (rows.empty()) throw StateError("evaluate_rows: no predictions");
  RegimeEvaluation eval;
  eval.regime = rows.front().regime;
  eval.rule = rule;

  std::map<int, std::pair<std::vector<int>, std::vector<double>>> by_site;
  std::map<std::pair<int, int>, std::pair<std::vector<int>, std::vector<double>>>
      by_cell;
  std::vector<int> all_y;
  std::vector<double> all_p;
  for (const auto& r : rows) {
    by_site[r.site_id].first.push_back(r.y_true);
    by_site[r.site_id].second.push_back(r.y_prob);
    if (rule == GlobalRule::kPerCell) {
      by_cell[{r.site_id, r.cluster}].first.push_back(r.y_true);
      by_cell[{r.site_id, r.cluster}].second.push_back(r.y_prob);
    }
    all_y.push_back(r.y_true);
    all_p.push_back(r.y_prob);
  }

  switch (rule) {
    case GlobalRule::kPooled: {
      auto m = metrics_for("global", all_y, all_p);
      if (!m.defined) throw MetricError("evaluate_rows: pooled metric undefined");
      eval.global_auc = m.auc;
      eval.global_auprc = m.auprc;
      return eval;
    }
    case GlobalRule::kPerSite: {
      std::vector<std::pair<double, double>> auc_cells, pr_cells;
      for (const auto& [site, data] : by_site) {
        auto m = metrics_for("site:" + std::to_string(site), data.first,
                             data.second);
        if (m.defined) {
          auc_cells.emplace_back(m.auc, static_cast<double>(m.n_samples));
          pr_cells.emplace_back(m.auprc, static_cast<double>(m.n_samples));
        }
        eval.per_site.push_back(std::move(m));
      }
      eval.global_auc = global_weighted(auc_cells);
      eval.global_auprc = global_weighted(pr_cells);
      return eval;
    }
    case GlobalRule::kPerCell: {
      std::vector<std::pair<double, double>> auc_cells, pr_cells;
      std::map<int, std::pair<std::vector<std::pair<double, double>>,
                              std::vector<std::pair<double, double>>>>
          site_cells;
      for (const auto& [key, data] : by_cell) {
        auto m = metrics_for(
            "cell:" + std::to_string(key.first) + ":" + std::to_string(key.second),
            data.first, data.second);
        if (m.defined) {
          const auto n = static_cast<double>(m.n_samples);
          auc_cells.emplace_back(m.auc, n);
          pr_cells.emplace_back(m.auprc, n);
          site_cells[key.first].first.emplace_back(m.auc, n);
          site_cells[key.first].second.emplace_back(m.auprc, n);
        }
        eval.per_cell.push_back(std::move(m));
      }
      eval.global_auc = global_weighted(auc_cells);
      eval.global_auprc = global_weighted(pr_cells);
      // Per-site view: within-site cell-weighted means.
      for (const auto& [site, cells] : site_cells) {
        ScopeMetrics m;
        m.scope = "site:" + std::to_string(site);
        m.defined = true;
        m.auc = global_weighted(cells.first);
        m.auprc = global_weighted(cells.second);
        for (const auto& [metric, n] : cells.first) {
          m.n_samples += static_cast<std::size_t>(n);
        }
        eval.per_site.push_back(std::move(m));
      }
      return eval;
    }
  }
  throw StateError("evaluate_rows: unknown rule");
}

const RegimeSummary& HarnessResult::summary(const std::string& regime) const {
  for (const auto& s : regimes) {
    if (s.regime == regime) return s;
  }
  throw StateError("harness: no summary for regime '" + regime + "'");
}

namespace {

using predict::PredictionRow;
using predict::Regime;

std::vector<PredictionRow> rows_for_unclustered(
    const std::vector<cohort::SiteDataset>& sites,
    const std::vector<cohort::SplitIndex>& splits,
    const predict::MultiHeadSpec& spec, const std::vector<double>& params,
    const char* regime, std::uint64_t seed) {
  std::vector<PredictionRow> rows;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const auto probs =
        predict::predict_probs(spec, params, sites[s], splits[s].test);
    for (std::size_t i = 0; i < splits[s].test.size(); ++i) {
      const auto& rec = sites[s].records[splits[s].test[i]];
      rows.push_back({rec.patient_id, sites[s].site_id, -1, rec.mortality,
                      probs[i], regime, seed});
    }
  }
  return rows;
}

std::vector<PredictionRow> rows_for_clustered(
    const std::vector<cohort::SiteDataset>& sites,
    const std::vector<cohort::SplitIndex>& splits,
    const predict::MultiHeadSpec& spec, const predict::ClusterModelSet& models,
    const predict::SiteClusterLabels& labels, const char* regime,
    std::uint64_t seed) {
  std::vector<PredictionRow> rows;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const auto probs = predict::predict_clustered(spec, models, sites[s],
                                                  splits[s].test, labels);
    const auto& site_labels = labels.at(sites[s].site_id);
    for (std::size_t i = 0; i < splits[s].test.size(); ++i) {
      const auto row = splits[s].test[i];
      const auto& rec = sites[s].records[row];
      rows.push_back({rec.patient_id, sites[s].site_id,
                      static_cast<int>(site_labels[row]), rec.mortality,
                      probs[i], regime, seed});
    }
  }
  return rows;
}

struct RepResult {
  std::map<std::string, RegimeEvaluation> evals;
};

}  // namespace

HarnessResult run_comparison(
    const std::vector<cohort::SiteDataset>& sites,
    const cohort::FeatureSchema& schema,
    const predict::SiteClusterLabels& pcbfl_labels, std::size_t pcbfl_k,
    const std::optional<predict::SiteClusterLabels>& cbfl_labels,
    const HarnessConfig& config) {
  if (config.repetitions < 1) throw ConfigError("harness: need repetitions >= 1");
  const bool wants_cbfl =
      std::count(config.regimes.begin(), config.regimes.end(), Regime::kCbfl) > 0;
  if (wants_cbfl && !cbfl_labels.has_value()) {
    throw StateError("harness: cbfl requested without a cbfl assignment");
  }
  if (!config.dump_dir.empty()) {
    std::filesystem::create_directories(config.dump_dir);
  }

  std::vector<RepResult> reps(config.repetitions);

  parallel_for_each(config.repetitions, config.workers, [&](std::size_t rep) {
    const std::uint64_t rep_seed = rng::derive(config.seed, "rep", rep);
    std::vector<cohort::SplitIndex> splits;
    splits.reserve(sites.size());
    for (std::size_t s = 0; s < sites.size(); ++s) {
      splits.push_back(cohort::split(sites[s], config.split_ratio,
                                     rng::derive(rep_seed, "split", s)));
    }

    predict::TrainContext ctx;
    ctx.sites = &sites;
    ctx.schema = &schema;
    ctx.splits = &splits;
    ctx.spec = config.spec;
    ctx.plan = config.plan;
    ctx.seed = rep_seed;
    ctx.bus = config.bus;
    ctx.workers = 1;  // parallelism lives at the repetition level

    std::vector<PredictionRow> dump;
    for (const Regime regime : config.regimes) {
      std::vector<PredictionRow> rows;
      GlobalRule rule = GlobalRule::kPerSite;
      switch (regime) {
        case Regime::kFedAvg: {
          const auto params = predict::train_fedavg(ctx);
          rows = rows_for_unclustered(sites, splits, ctx.spec, params, "fedavg",
                                      rep_seed);
          break;
        }
        case Regime::kSingleSite: {
          const auto models = predict::train_single_site(ctx);
          for (std::size_t s = 0; s < sites.size(); ++s) {
            const auto probs = predict::predict_probs(ctx.spec, models[s].second,
                                                      sites[s], splits[s].test);
            for (std::size_t i = 0; i < splits[s].test.size(); ++i) {
              const auto& rec = sites[s].records[splits[s].test[i]];
              rows.push_back({rec.patient_id, sites[s].site_id, -1,
                              rec.mortality, probs[i], "single_site", rep_seed});
            }
          }
          break;
        }
        case Regime::kCentralized: {
          const auto params = predict::train_centralized(ctx);
          rows = rows_for_unclustered(sites, splits, ctx.spec, params,
                                      "centralized", rep_seed);
          rule = GlobalRule::kPooled;
          break;
        }
        case Regime::kPcbfl: {
          const auto models = predict::train_pcbfl(ctx, pcbfl_labels, pcbfl_k);
          rows = rows_for_clustered(sites, splits, ctx.spec, models,
                                    pcbfl_labels, "pcbfl", rep_seed);
          rule = GlobalRule::kPerCell;
          break;
        }
        case Regime::kCbfl: {
          const auto models =
              predict::train_clustered(ctx, *cbfl_labels, pcbfl_k);
          rows = rows_for_clustered(sites, splits, ctx.spec, models,
                                    *cbfl_labels, "cbfl", rep_seed);
          rule = GlobalRule::kPerCell;
          break;
        }
      }
      auto eval = evaluate_rows(rows, rule);
      if (config.bus != nullptr) {
        // Each site reports its own test metrics; the coordinator collects
        // them. Tagged "eval": no parameter message may carry this phase.
        char session[64];
        std::snprintf(session, sizeof(session), "metrics:%016llx:%s",
                      static_cast<unsigned long long>(rep_seed),
                      predict::regime_name(regime));
        std::size_t sent = 0;
        for (const auto& m : eval.per_site) {
          if (!m.defined) continue;
          const int site = std::stoi(m.scope.substr(5));
          config.bus->send({fed::MessageType::kMetrics,
                            fed::site_address(site), fed::server_address(),
                            session,
                            std::vector<double>{m.auc, m.auprc,
                                                static_cast<double>(m.n_samples)},
                            "eval"});
          ++sent;
        }
        for (std::size_t j = 0; j < sent; ++j) {
          config.bus->receive(fed::server_address(), fed::MessageType::kMetrics,
                              session);
        }
      }
      reps[rep].evals[predict::regime_name(regime)] = std::move(eval);
      if (!config.dump_dir.empty()) {
        dump.insert(dump.end(), rows.begin(), rows.end());
      }
    }
    if (!config.dump_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof(name), "predictions_rep%04zu.csv", rep);
      predict::export_predictions_csv(
          (std::filesystem::path(config.dump_dir) / name).string(), dump);
    }
  });

  HarnessResult result;
  std::size_t regime_index = 0;
  for (const Regime regime : config.regimes) {
    const std::string name = predict::regime_name(regime);
    RegimeSummary summary;
    summary.regime = name;
    std::map<int, std::pair<double, std::size_t>> site_auc_acc;
    std::map<int, std::pair<double, std::size_t>> site_pr_acc;
    for (const auto& rep : reps) {
      const auto& eval = rep.evals.at(name);
      summary.rep_auc.push_back(eval.global_auc);
      summary.rep_auprc.push_back(eval.global_auprc);
      for (const auto& m : eval.per_site) {
        if (!m.defined) continue;
        const int site = std::stoi(m.scope.substr(5));
        site_auc_acc[site].first += m.auc;
        site_auc_acc[site].second += 1;
        site_pr_acc[site].first += m.auprc;
        site_pr_acc[site].second += 1;
      }
    }
    summary.mean_auc =
        std::accumulate(summary.rep_auc.begin(), summary.rep_auc.end(), 0.0) /
        static_cast<double>(summary.rep_auc.size());
    summary.mean_auprc = std::accumulate(summary.rep_auprc.begin(),
                                         summary.rep_auprc.end(), 0.0) /
                         static_cast<double>(summary.rep_auprc.size());
    summary.auc_ci = bootstrap_mean_ci(
        summary.rep_auc, config.bootstrap_resamples, 0.95,
        rng::derive(config.seed, "boot.auc", regime_index));
    summary.auprc_ci = bootstrap_mean_ci(
        summary.rep_auprc, config.bootstrap_resamples, 0.95,
        rng::derive(config.seed, "boot.auprc", regime_index));
    for (const auto& [site, acc] : site_auc_acc) {
      summary.site_mean_auc[site] = acc.first / static_cast<double>(acc.second);
    }
    for (const auto& [site, acc] : site_pr_acc) {
      summary.site_mean_auprc[site] = acc.first / static_cast<double>(acc.second);
    }
    result.regimes.push_back(std::move(summary));
    ++regime_index;
  }

  // Best-regime-per-site counts; centralized has no per-site results and
  // is excluded.
  std::set<int> all_sites;
  for (const auto& s : result.regimes) {
    for (const auto& [site, v] : s.site_mean_auc) all_sites.insert(site);
  }
  for (int site : all_sites) {
    std::string best_auc, best_pr;
    double top_auc = -1.0, top_pr = -1.0;
    for (const auto& s : result.regimes) {
      if (s.regime == "centralized") continue;
      const auto it = s.site_mean_auc.find(site);
      if (it != s.site_mean_auc.end() && it->second > top_auc) {
        top_auc = it->second;
        best_auc = s.regime;
      }
      const auto jt = s.site_mean_auprc.find(site);
      if (jt != s.site_mean_auprc.end() && jt->second > top_pr) {
        top_pr = jt->second;
        best_pr = s.regime;
      }
    }
    if (!best_auc.empty()) result.best_site_count_auc[best_auc]++;
    if (!best_pr.empty()) result.best_site_count_auprc[best_pr]++;
  }
  return result;
}

}  // namespace fedclust::eval
