#include "fedclust/cli/stages.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "fedclust/cluster/cluster.hpp"
#include "fedclust/embed/embed.hpp"
#include "fedclust/errors.hpp"
#include "fedclust/eval/harness.hpp"
#include "fedclust/io/csv.hpp"
#include "fedclust/nn/snapshot.hpp"
#include "fedclust/smpc/smpc.hpp"
#include "json.hpp"

namespace fedclust::cli {

namespace fs = std::filesystem;

namespace {

std::string fnv_hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("manifest: cannot hash " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const auto n = static_cast<std::size_t>(in.gcount());
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  char hex[24];
  std::snprintf(hex, sizeof(hex), "fnv1a:%016llx",
                static_cast<unsigned long long>(h));
  return hex;
}

// Append one stage's outputs (with content hashes) to manifest.json.
void record_stage(const StageContext& ctx, const std::string& stage,
                  const std::vector<std::string>& files) {
  const fs::path manifest = ctx.out / "manifest.json";
  nlohmann::json j;
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    try {
      in >> j;
    } catch (const nlohmann::json::exception&) {
      j = nlohmann::json::object();
    }
  }
  nlohmann::json entry;
  for (const auto& f : files) {
    entry[f] = fnv_hash_file(ctx.out / f);
  }
  j["stages"][stage] = entry;
  std::ofstream out(manifest, std::ios::trunc);
  out << j.dump(2) << "\n";
}

void require_artifact(const StageContext& ctx, const fs::path& rel,
                      const std::string& needed_by) {
  if (!fs::exists(ctx.out / rel)) {
    throw StageError("stage '" + needed_by + "' requires missing artifact " +
                     (ctx.out / rel).string() +
                     " (run the upstream stage first)");
  }
}

std::string site_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "site_%03d.csv", index);
  return buf;
}

std::vector<fs::path> sorted_files(const fs::path& dir,
                                   const std::string& prefix) {
  std::vector<fs::path> files;
  if (!fs::exists(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<cohort::SiteDataset> load_sites(const StageContext& ctx,
                                            const std::string& needed_by) {
  require_artifact(ctx, "data", needed_by);
  const auto files = sorted_files(ctx.out / "data", "site_");
  if (files.empty()) {
    throw StageError("stage '" + needed_by + "': no site CSVs under " +
                     (ctx.out / "data").string());
  }
  std::vector<std::string> paths;
  for (const auto& f : files) paths.push_back(f.string());
  return cohort::ingest_csv(paths, ctx.config.schema);
}

// Federated min/max exchange over the bus: sites reveal per-feature extremes
// only, the coordinator reduces and broadcasts the table.
cohort::MinMaxTable normalize_over_bus(StageContext& ctx,
                                       std::vector<cohort::SiteDataset>& sites) {
  using fed::MessageType;
  for (const auto& site : sites) {
    auto ex = cohort::site_extremes(site, ctx.config.schema);
    std::vector<double> payload = ex.mins;
    payload.insert(payload.end(), ex.maxs.begin(), ex.maxs.end());
    ctx.bus.send({MessageType::kFeatureExtremes, fed::site_address(site.site_id),
                  fed::server_address(), "", std::move(payload), ""});
  }
  std::vector<cohort::FeatureExtremes> all;
  const std::size_t width = ctx.config.schema.total();
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const auto msg =
        ctx.bus.receive(fed::server_address(), MessageType::kFeatureExtremes);
    const auto& payload = std::get<std::vector<double>>(msg.payload);
    cohort::FeatureExtremes ex;
    ex.mins.assign(payload.begin(), payload.begin() + static_cast<long>(width));
    ex.maxs.assign(payload.begin() + static_cast<long>(width), payload.end());
    all.push_back(std::move(ex));
  }
  const auto table = cohort::reduce_extremes(all);
  for (auto& site : sites) {
    std::vector<double> payload = table.mins;
    payload.insert(payload.end(), table.maxs.begin(), table.maxs.end());
    ctx.bus.send({MessageType::kMinMaxTable, fed::server_address(),
                  fed::site_address(site.site_id), "", std::move(payload), ""});
    const auto msg = ctx.bus.receive(fed::site_address(site.site_id),
                                     MessageType::kMinMaxTable);
    const auto& received = std::get<std::vector<double>>(msg.payload);
    cohort::MinMaxTable site_table;
    site_table.mins.assign(received.begin(),
                           received.begin() + static_cast<long>(width));
    site_table.maxs.assign(received.begin() + static_cast<long>(width),
                           received.end());
    cohort::apply_normalization(site, ctx.config.schema, site_table);
  }
  return table;
}

predict::MultiHeadSpec spec_from_config(const ExperimentConfig& config) {
  auto spec = predict::MultiHeadSpec::for_schema(config.schema);
  spec.head_hidden = config.head_hidden;
  spec.classifier_hidden = config.classifier_hidden;
  return spec;
}

std::size_t load_chosen_k(const StageContext& ctx, const std::string& needed_by) {
  require_artifact(ctx, "chosen_k.json", needed_by);
  std::ifstream in(ctx.out / "chosen_k.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("chosen_k.json: " + std::string(e.what()));
  }
  return j.at("k").get<std::size_t>();
}

predict::SiteClusterLabels load_assignments(const StageContext& ctx,
                                            const std::string& file,
                                            const std::string& needed_by) {
  require_artifact(ctx, file, needed_by);
  const auto table = io::read_csv((ctx.out / file).string());
  const auto c_site = table.column("site_id");
  const auto c_cluster = table.column("cluster");
  predict::SiteClusterLabels labels;
  for (const auto& row : table.rows) {
    const int site = static_cast<int>(io::parse_int(row[c_site], file));
    labels[site].push_back(static_cast<std::uint32_t>(
        io::parse_int(row[c_cluster], file)));
  }
  return labels;
}

}  // namespace

void stage_gen_data(StageContext& ctx) {
  fs::create_directories(ctx.out / "data");
  write_resolved_config(ctx.config, (ctx.out / "resolved_config.json").string());

  std::vector<cohort::SiteDataset> sites;
  if (!ctx.config.data_csv.empty()) {
    sites = cohort::ingest_csv(ctx.config.data_csv, ctx.config.schema);
  } else {
    cohort::CohortConfig cohort_config = ctx.config.cohort;
    cohort_config.seed = rng::derive(ctx.config.seed, "cohort");
    sites = cohort::generate_synthetic(cohort_config, ctx.config.schema);
  }

  std::vector<std::string> written{"resolved_config.json"};
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const auto name = "data/" + site_file_name(static_cast<int>(s));
    cohort::export_csv(sites[s], ctx.config.schema, (ctx.out / name).string());
    written.push_back(name);
  }
  record_stage(ctx, "gen-data", written);
  std::printf("[gen-data] %zu sites written under %s\n", sites.size(),
              (ctx.out / "data").string().c_str());
}

void stage_embed(StageContext& ctx) {
  auto sites = load_sites(ctx, "embed");
  write_resolved_config(ctx.config, (ctx.out / "resolved_config.json").string());

  ctx.bus.set_phase("train");
  const auto table = normalize_over_bus(ctx, sites);
  cohort::save_minmax_json((ctx.out / "minmax.json").string(), table);

  fs::create_directories(ctx.out / "models");
  fs::create_directories(ctx.out / "embeddings");

  const std::uint64_t embed_seed = rng::derive(ctx.config.seed, "embed");
  embed::DomainAutoencoders aes;
  io::CsvTable trace_table;
  trace_table.header = {"domain", "round", "site", "loss", "n_samples"};
  const std::array<std::size_t, 3> widths = {ctx.config.schema.n_diagnosis,
                                             ctx.config.schema.n_drugs,
                                             ctx.config.schema.n_physio};
  std::vector<std::string> written{"resolved_config.json", "minmax.json"};
  for (int d = 0; d < 3; ++d) {
    embed::AutoencoderSpec spec;
    spec.domain = d;
    spec.input_width = widths[static_cast<std::size_t>(d)];
    spec.encoder_widths = ctx.config.encoder_widths;
    spec.corruption_rate = ctx.config.corruption_rate;
    spec.output_bias_init = d == 2 ? 0.0 : -3.0;  // counts are sparse
    aes.specs[static_cast<std::size_t>(d)] = spec;

    std::vector<fed::TraceRow> trace;
    aes.params[static_cast<std::size_t>(d)] = embed::train_domain_autoencoder(
        sites, spec, ctx.config.embed_plan, embed_seed, &ctx.bus,
        ctx.config.workers, nullptr, &trace);
    for (const auto& row : trace) {
      trace_table.rows.push_back({embed::kDomainNames[d],
                                  std::to_string(row.round),
                                  std::to_string(row.site_id),
                                  io::format_double(row.loss),
                                  std::to_string(row.n_samples)});
    }

    nn::DenseNet proto = embed::make_autoencoder(spec);
    nn::Snapshot snap{nn::layout_of(proto), aes.params[static_cast<std::size_t>(d)]};
    const std::string model_file =
        std::string("models/ae_") + embed::kDomainNames[d] + ".bin";
    nn::save_snapshot_binary((ctx.out / model_file).string(), snap);
    written.push_back(model_file);
  }
  io::write_csv((ctx.out / "ae_trace.csv").string(), trace_table);
  written.push_back("ae_trace.csv");

  for (std::size_t s = 0; s < sites.size(); ++s) {
    const auto em = embed::embed_patients(sites[s], aes);
    const auto name = "embeddings/" + site_file_name(static_cast<int>(s));
    embed::export_embeddings_csv(em, (ctx.out / name).string());
    written.push_back(name);
  }
  record_stage(ctx, "embed", written);
  std::printf("[embed] %zu-dim embeddings for %zu sites\n",
              3 * ctx.config.encoder_widths.back(), sites.size());
}

void stage_similarity(StageContext& ctx, const StageFlags& flags) {
  require_artifact(ctx, "embeddings", "similarity");
  const auto files = sorted_files(ctx.out / "embeddings", "site_");
  if (files.empty()) {
    throw StageError("stage 'similarity': no embedding CSVs found");
  }
  write_resolved_config(ctx.config, (ctx.out / "resolved_config.json").string());

  std::vector<embed::EmbeddingMatrix> embeddings;
  for (const auto& f : files) {
    embeddings.push_back(embed::import_embeddings_csv(f.string()));
  }
  for (auto& em : embeddings) smpc::l2_normalize(em);

  ctx.bus.set_phase("similarity");
  const std::uint64_t sim_seed = rng::derive(ctx.config.seed, "similarity");
  const auto secure =
      smpc::assemble_similarity(embeddings, sim_seed, &ctx.bus,
                                ctx.config.workers);
  smpc::save_similarity((ctx.out / "similarity.bin").string(),
                        (ctx.out / "registry.json").string(), secure);
  std::vector<std::string> written{"resolved_config.json", "similarity.bin",
                                   "registry.json"};

  if (flags.plaintext_oracle) {
    const auto oracle = smpc::assemble_similarity_plaintext(embeddings);
    smpc::save_similarity((ctx.out / "similarity_oracle.bin").string(),
                          (ctx.out / "registry_oracle.json").string(), oracle);
    const double err = smpc::rmse(secure.s, oracle.s);
    nlohmann::json j;
    j["rmse_secure_vs_plaintext"] = err;
    j["patients"] = secure.size();
    std::ofstream check(ctx.out / "smpc_check.json", std::ios::trunc);
    check << j.dump(2) << "\n";

    // Scatter sample for the verification figure: secure vs oracle values.
    io::CsvTable scatter;
    scatter.header = {"secure", "plaintext"};
    rng::Rng rng(rng::derive(sim_seed, "scatter"));
    const std::size_t n = secure.size();
    const std::size_t samples = std::min<std::size_t>(2000, n * (n - 1) / 2);
    for (std::size_t t = 0; t < samples; ++t) {
      const std::size_t i = rng.uniform_int(n);
      const std::size_t j2 = rng.uniform_int(n);
      scatter.rows.push_back({io::format_double(secure.s(i, j2)),
                              io::format_double(oracle.s(i, j2))});
    }
    io::write_csv((ctx.out / "similarity_scatter.csv").string(), scatter);
    written.insert(written.end(), {"similarity_oracle.bin",
                                   "registry_oracle.json", "smpc_check.json",
                                   "similarity_scatter.csv"});
    std::printf("[similarity] secure vs plaintext RMSE = %.3e\n", err);
  }
  record_stage(ctx, "similarity", written);
  std::printf("[similarity] %zu x %zu matrix assembled\n", secure.size(),
              secure.size());
}

void stage_cluster(StageContext& ctx, const StageFlags& flags) {
  require_artifact(ctx, "similarity.bin", "cluster");
  require_artifact(ctx, "registry.json", "cluster");
  write_resolved_config(ctx.config, (ctx.out / "resolved_config.json").string());

  const auto sim = smpc::load_similarity((ctx.out / "similarity.bin").string(),
                                         (ctx.out / "registry.json").string());

  cluster::SpectralOptions opt;
  opt.eig.workers = ctx.config.workers;
  opt.kmeans.workers = ctx.config.workers;
  const std::uint64_t cluster_seed = rng::derive(ctx.config.seed, "cluster");

  const std::size_t k_max = std::min<std::size_t>(ctx.config.k_max, sim.size());
  const auto curve = cluster::wcss_curve(sim.s, k_max, cluster_seed, opt);
  io::CsvTable curve_table;
  curve_table.header = {"k", "wcss"};
  for (const auto& [k, w] : curve.points) {
    curve_table.rows.push_back({std::to_string(k), io::format_double(w)});
  }
  io::write_csv((ctx.out / "wcss_curve.csv").string(), curve_table);

  std::size_t k = 0;
  std::string method;
  if (flags.k_override) {
    k = *flags.k_override;
    method = "fixed (--k)";
  } else if (ctx.config.fixed_k) {
    k = *ctx.config.fixed_k;
    method = "fixed (config)";
  } else {
    k = cluster::elbow(curve);
    method = "elbow";
  }
  if (k < 1 || k > sim.size()) {
    throw ConfigError("cluster: chosen k is out of range");
  }

  const auto result = cluster::spectral_cluster(sim.s, k, cluster_seed, opt);

  nlohmann::json jk;
  jk["k"] = k;
  jk["method"] = method;
  {
    std::ofstream out(ctx.out / "chosen_k.json", std::ios::trunc);
    out << jk.dump(2) << "\n";
  }

  io::CsvTable assign_table;
  assign_table.header = {"patient_id", "site_id", "cluster"};
  for (std::size_t i = 0; i < sim.index.size(); ++i) {
    assign_table.rows.push_back({sim.index[i].patient_id,
                                 std::to_string(sim.index[i].site_id),
                                 std::to_string(result.assignment.labels[i])});
  }
  io::write_csv((ctx.out / "assignments.csv").string(), assign_table);

  // Sites receive their patients' cluster labels only.
  ctx.bus.set_phase("cluster");
  std::map<int, std::vector<std::uint32_t>> per_site;
  for (std::size_t i = 0; i < sim.index.size(); ++i) {
    per_site[sim.index[i].site_id].push_back(result.assignment.labels[i]);
  }
  for (const auto& [site, labels] : per_site) {
    ctx.bus.send({fed::MessageType::kClusterLabels, fed::server_address(),
                  fed::site_address(site), "", labels, ""});
    ctx.bus.receive(fed::site_address(site), fed::MessageType::kClusterLabels);
  }

  // Cluster characterization against the raw (pre-normalization) features.
  const auto sites = load_sites(ctx, "cluster");
  predict::SiteClusterLabels labels =
      predict::split_assignment(sim.index, result.assignment.labels);
  const auto stats = eval::cluster_stats(sites, ctx.config.schema, labels, k);
  nlohmann::json js;
  js["k"] = stats.k;
  js["cluster_sizes"] = stats.cluster_sizes;
  js["mortality_rate"] = stats.mortality_rate;
  js["physio_f"] = stats.physio_f;
  js["physio_p"] = stats.physio_p;
  js["physio_significant_bonferroni"] = stats.physio_significant;
  nlohmann::json means = nlohmann::json::array();
  for (std::size_t c = 0; c < stats.k; ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < ctx.config.schema.n_physio; ++j) {
      row.push_back(stats.physio_means(c, j));
    }
    means.push_back(row);
  }
  js["physio_means"] = means;
  js["region_chi2"] = stats.region_chi2;
  js["region_p"] = stats.region_p;
  js["region_dof"] = stats.region_dof;
  {
    std::ofstream out(ctx.out / "cluster_stats.json", std::ios::trunc);
    out << js.dump(2) << "\n";
  }

  record_stage(ctx, "cluster",
               {"resolved_config.json", "wcss_curve.csv", "chosen_k.json",
                "assignments.csv", "cluster_stats.json"});
  std::printf("[cluster] k = %zu (%s)\n", k, method.c_str());
}

void stage_train(StageContext& ctx) {
  auto sites = load_sites(ctx, "train");
  require_artifact(ctx, "minmax.json", "train");
  require_artifact(ctx, "assignments.csv", "train");
  write_resolved_config(ctx.config, (ctx.out / "resolved_config.json").string());

  const auto table =
      cohort::load_minmax_json((ctx.out / "minmax.json").string());
  for (auto& site : sites) {
    cohort::apply_normalization(site, ctx.config.schema, table);
  }

  const std::size_t k = load_chosen_k(ctx, "train");
  const auto pcbfl_labels = load_assignments(ctx, "assignments.csv", "train");

  std::optional<predict::SiteClusterLabels> cbfl_labels;
  const bool wants_cbfl =
      std::count(ctx.config.regimes.begin(), ctx.config.regimes.end(),
                 predict::Regime::kCbfl) > 0;
  std::vector<std::string> written{"resolved_config.json"};
  if (wants_cbfl) {
    require_artifact(ctx, "embeddings", "train (cbfl regime)");
    std::vector<embed::EmbeddingMatrix> embeddings;
    for (const auto& f : sorted_files(ctx.out / "embeddings", "site_")) {
      embeddings.push_back(embed::import_embeddings_csv(f.string()));
    }
    ctx.bus.set_phase("train");
    cbfl_labels = predict::cbfl_assign(
        embeddings, std::min(k, embeddings.size()),
        rng::derive(ctx.config.seed, "cbfl"), false, &ctx.bus,
        ctx.config.workers);
    io::CsvTable cbfl_table;
    cbfl_table.header = {"patient_id", "site_id", "cluster"};
    for (const auto& em : embeddings) {
      const auto& labels = cbfl_labels->at(em.site_id);
      for (std::size_t r = 0; r < em.patient_ids.size(); ++r) {
        cbfl_table.rows.push_back({em.patient_ids[r],
                                   std::to_string(em.site_id),
                                   std::to_string(labels[r])});
      }
    }
    io::write_csv((ctx.out / "cbfl_assignments.csv").string(), cbfl_table);
    written.push_back("cbfl_assignments.csv");
  }

  eval::HarnessConfig hc;
  hc.regimes = ctx.config.regimes;
  hc.repetitions = ctx.config.repetitions;
  hc.plan = ctx.config.predict_plan;
  hc.split_ratio = ctx.config.split_ratio;
  hc.bootstrap_resamples = ctx.config.bootstrap_resamples;
  hc.spec = spec_from_config(ctx.config);
  hc.seed = rng::derive(ctx.config.seed, "harness");
  hc.workers = ctx.config.workers;
  hc.dump_dir = (ctx.out / "predictions").string();
  hc.bus = &ctx.bus;

  ctx.bus.set_phase("train");
  run_comparison(sites, ctx.config.schema, pcbfl_labels, k, cbfl_labels, hc);

  for (std::size_t rep = 0; rep < hc.repetitions; ++rep) {
    char name[64];
    std::snprintf(name, sizeof(name), "predictions/predictions_rep%04zu.csv",
                  rep);
    written.push_back(name);
  }
  record_stage(ctx, "train", written);
  std::printf("[train] %zu repetitions x %zu regimes dumped\n",
              hc.repetitions, hc.regimes.size());
}

void stage_evaluate(StageContext& ctx) {
  require_artifact(ctx, "predictions", "evaluate");
  const auto files = sorted_files(ctx.out / "predictions", "predictions_rep");
  if (files.empty()) {
    throw StageError("stage 'evaluate': no prediction dumps found");
  }
  write_resolved_config(ctx.config, (ctx.out / "resolved_config.json").string());
  ctx.bus.set_phase("eval");

  // regime -> repetition seed -> rows
  std::map<std::string, std::map<std::uint64_t, std::vector<predict::PredictionRow>>>
      grouped;
  for (const auto& f : files) {
    for (auto& row : predict::import_predictions_csv(f.string())) {
      grouped[row.regime][row.seed].push_back(std::move(row));
    }
  }

  auto rule_for = [](const std::string& regime) {
    if (regime == "pcbfl" || regime == "cbfl") return eval::GlobalRule::kPerCell;
    if (regime == "centralized") return eval::GlobalRule::kPooled;
    return eval::GlobalRule::kPerSite;
  };

  struct Summary {
    std::vector<double> auc, auprc;
    std::map<int, std::pair<double, std::size_t>> site_auc, site_auprc;
  };
  std::map<std::string, Summary> summaries;
  for (const auto& [regime, by_seed] : grouped) {
    auto& s = summaries[regime];
    for (const auto& [seed, rows] : by_seed) {
      const auto eval_result = eval::evaluate_rows(rows, rule_for(regime));
      s.auc.push_back(eval_result.global_auc);
      s.auprc.push_back(eval_result.global_auprc);
      for (const auto& m : eval_result.per_site) {
        if (!m.defined) continue;
        const int site = std::stoi(m.scope.substr(5));
        s.site_auc[site].first += m.auc;
        s.site_auc[site].second += 1;
        s.site_auprc[site].first += m.auprc;
        s.site_auprc[site].second += 1;
      }
    }
  }

  // summary.csv: one line per regime with means and bootstrap CIs.
  io::CsvTable summary_table;
  summary_table.header = {"regime",   "repetitions", "mean_auc",  "auc_lo",
                          "auc_hi",   "mean_auprc",  "auprc_lo",  "auprc_hi"};
  std::map<std::string, std::pair<double, double>> means;
  std::size_t regime_index = 0;
  for (const auto& [regime, s] : summaries) {
    const double mean_auc =
        std::accumulate(s.auc.begin(), s.auc.end(), 0.0) / s.auc.size();
    const double mean_pr =
        std::accumulate(s.auprc.begin(), s.auprc.end(), 0.0) / s.auprc.size();
    const auto ci_auc = eval::bootstrap_mean_ci(
        s.auc, ctx.config.bootstrap_resamples, 0.95,
        rng::derive(ctx.config.seed, "eval.boot.auc", regime_index));
    const auto ci_pr = eval::bootstrap_mean_ci(
        s.auprc, ctx.config.bootstrap_resamples, 0.95,
        rng::derive(ctx.config.seed, "eval.boot.auprc", regime_index));
    summary_table.rows.push_back(
        {regime, std::to_string(s.auc.size()), io::format_double(mean_auc),
         io::format_double(ci_auc.first), io::format_double(ci_auc.second),
         io::format_double(mean_pr), io::format_double(ci_pr.first),
         io::format_double(ci_pr.second)});
    means[regime] = {mean_auc, mean_pr};
    ++regime_index;
  }
  io::write_csv((ctx.out / "summary.csv").string(), summary_table);

  // per_site.csv: per-regime per-site mean metrics across repetitions.
  io::CsvTable site_table;
  site_table.header = {"regime", "site_id", "mean_auc", "mean_auprc"};
  for (const auto& [regime, s] : summaries) {
    for (const auto& [site, acc] : s.site_auc) {
      const auto pr = s.site_auprc.at(site);
      site_table.rows.push_back(
          {regime, std::to_string(site),
           io::format_double(acc.first / static_cast<double>(acc.second)),
           io::format_double(pr.first / static_cast<double>(pr.second))});
    }
  }
  io::write_csv((ctx.out / "per_site.csv").string(), site_table);

  // best_counts.csv: sites where each regime has the highest mean metric
  // (centralized excluded: it has no per-site results).
  std::set<int> all_sites;
  for (const auto& [regime, s] : summaries) {
    for (const auto& [site, acc] : s.site_auc) all_sites.insert(site);
  }
  std::map<std::string, std::pair<int, int>> wins;
  for (const auto& [regime, s] : summaries) {
    if (regime != "centralized") wins[regime] = {0, 0};
  }
  for (const int site : all_sites) {
    std::string best_auc, best_pr;
    double top_auc = -1.0, top_pr = -1.0;
    for (const auto& [regime, s] : summaries) {
      if (regime == "centralized") continue;
      const auto it = s.site_auc.find(site);
      if (it != s.site_auc.end()) {
        const double v = it->second.first / it->second.second;
        if (v > top_auc) {
          top_auc = v;
          best_auc = regime;
        }
      }
      const auto jt = s.site_auprc.find(site);
      if (jt != s.site_auprc.end()) {
        const double v = jt->second.first / jt->second.second;
        if (v > top_pr) {
          top_pr = v;
          best_pr = regime;
        }
      }
    }
    if (!best_auc.empty()) wins[best_auc].first++;
    if (!best_pr.empty()) wins[best_pr].second++;
  }
  io::CsvTable best_table;
  best_table.header = {"regime", "best_auc_sites", "best_auprc_sites"};
  for (const auto& [regime, w] : wins) {
    best_table.rows.push_back(
        {regime, std::to_string(w.first), std::to_string(w.second)});
  }
  io::write_csv((ctx.out / "best_counts.csv").string(), best_table);

  // comparison.csv: pcbfl improvements over the other regimes, reported both
  // as absolute points and as relative percentages.
  io::CsvTable cmp_table;
  cmp_table.header = {"baseline",          "auc_gain_points",
                      "auc_gain_percent",  "auprc_gain_points",
                      "auprc_gain_percent"};
  if (means.count("pcbfl") > 0) {
    const auto [p_auc, p_pr] = means.at("pcbfl");
    for (const auto& [regime, m] : means) {
      if (regime == "pcbfl") continue;
      cmp_table.rows.push_back(
          {regime, io::format_double(p_auc - m.first),
           io::format_double(100.0 * (p_auc - m.first) / m.first),
           io::format_double(p_pr - m.second),
           io::format_double(100.0 * (p_pr - m.second) / m.second)});
    }
  }
  io::write_csv((ctx.out / "comparison.csv").string(), cmp_table);

  record_stage(ctx, "evaluate",
               {"resolved_config.json", "summary.csv", "per_site.csv",
                "best_counts.csv", "comparison.csv"});
  std::printf("[evaluate] summaries for %zu regimes written\n",
              summaries.size());
}

namespace {

bool stage_done(const StageContext& ctx, const std::string& stage) {
  const fs::path manifest = ctx.out / "manifest.json";
  if (!fs::exists(manifest)) return false;
  std::ifstream in(manifest);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return false;
  }
  if (!j.contains("stages") || !j["stages"].contains(stage)) return false;
  for (const auto& [file, hash] : j["stages"][stage].items()) {
    if (!fs::exists(ctx.out / file)) return false;
  }
  return true;
}

}  // namespace

void run_pipeline(StageContext& ctx, const StageFlags& flags) {
  struct Step {
    const char* name;
    std::function<void()> run;
  };
  const std::vector<Step> steps{
      {"gen-data", [&] { stage_gen_data(ctx); }},
      {"embed", [&] { stage_embed(ctx); }},
      {"similarity", [&] { stage_similarity(ctx, flags); }},
      {"cluster", [&] { stage_cluster(ctx, flags); }},
      {"train", [&] { stage_train(ctx); }},
      {"evaluate", [&] { stage_evaluate(ctx); }},
  };
  for (const auto& step : steps) {
    if (flags.resume && stage_done(ctx, step.name)) {
      std::printf("[pipeline] %s: up to date, skipped\n", step.name);
      continue;
    }
    step.run();
  }
}

}  // namespace fedclust::cli
