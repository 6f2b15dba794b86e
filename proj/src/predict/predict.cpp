#include "fedclust/predict/predict.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "fedclust/errors.hpp"
#include "fedclust/io/csv.hpp"
#include "fedclust/kernels/kernels.hpp"
#include "fedclust/parallel.hpp"

namespace fedclust::predict {

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kSingleSite:
      return "single_site";
    case Regime::kCentralized:
      return "centralized";
    case Regime::kFedAvg:
      return "fedavg";
    case Regime::kCbfl:
      return "cbfl";
    case Regime::kPcbfl:
      return "pcbfl";
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  for (Regime r : {Regime::kSingleSite, Regime::kCentralized, Regime::kFedAvg,
                   Regime::kCbfl, Regime::kPcbfl}) {
    if (name == regime_name(r)) return r;
  }
  throw ConfigError("unknown regime '" + name + "'");
}

void MultiHeadSpec::validate() const {
  for (std::size_t w : domain_widths) {
    if (w < 1) throw ConfigError("multihead: domain widths must be >= 1");
  }
  if (head_hidden < 1 || head_out < 1 || classifier_hidden < 1) {
    throw ConfigError("multihead: layer widths must be >= 1");
  }
}

MultiHeadSpec MultiHeadSpec::for_schema(const cohort::FeatureSchema& schema) {
  MultiHeadSpec spec;
  spec.domain_widths = {schema.n_diagnosis, schema.n_drugs, schema.n_physio};
  return spec;
}

MultiHeadNet make_multihead(const MultiHeadSpec& spec) {
  spec.validate();
  using nn::Activation;
  MultiHeadNet net;
  net.spec = spec;
  for (std::size_t d = 0; d < 3; ++d) {
    net.heads[d] =
        nn::make_net({spec.domain_widths[d], spec.head_hidden, spec.head_out},
                     {Activation::kRelu, Activation::kRelu});
  }
  net.classifier =
      nn::make_net({3 * spec.head_out, spec.classifier_hidden, 1},
                   {Activation::kRelu, Activation::kSigmoid});
  return net;
}

nn::ParamLayout multihead_layout(const MultiHeadNet& net) {
  nn::ParamLayout layout;
  std::size_t offset = 0;
  auto append = [&](const nn::DenseNet& part, const std::string& prefix) {
    const auto sub = nn::layout_of(part);
    for (auto block : sub.blocks) {
      block.name = prefix + "." + block.name;
      block.offset += offset;
      layout.blocks.push_back(std::move(block));
    }
    offset += sub.total;
  };
  for (std::size_t d = 0; d < 3; ++d) {
    append(net.heads[d], std::string("head_") + embed::kDomainNames[d]);
  }
  append(net.classifier, "classifier");
  layout.total = offset;
  return layout;
}

std::vector<double> multihead_flatten(const MultiHeadNet& net) {
  std::vector<double> out;
  for (const auto& h : net.heads) {
    const auto p = nn::flatten(h);
    out.insert(out.end(), p.begin(), p.end());
  }
  const auto c = nn::flatten(net.classifier);
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

void multihead_unflatten(MultiHeadNet& net, std::span<const double> params) {
  std::size_t offset = 0;
  auto take = [&](nn::DenseNet& part) {
    const std::size_t n = nn::layout_of(part).total;
    if (offset + n > params.size()) {
      throw ShapeError("multihead_unflatten: parameter vector too short");
    }
    nn::unflatten(part, params.subspan(offset, n));
    offset += n;
  };
  for (auto& h : net.heads) take(h);
  take(net.classifier);
  if (offset != params.size()) {
    throw ShapeError("multihead_unflatten: parameter vector too long");
  }
}

void multihead_glorot(MultiHeadNet& net, rng::Rng& rng) {
  for (auto& h : net.heads) nn::glorot_init(h, rng);
  nn::glorot_init(net.classifier, rng);
}

namespace {

struct MultiHeadActivations {
  std::array<std::vector<Matrix>, 3> heads;
  Matrix concat;
  std::vector<Matrix> classifier;
};

MultiHeadActivations multihead_forward_full(const MultiHeadNet& net,
                                            const std::array<Matrix, 3>& domains) {
  MultiHeadActivations acts;
  for (std::size_t d = 0; d < 3; ++d) {
    acts.heads[d] = nn::forward(net.heads[d], domains[d]);
  }
  acts.concat = lin::hcat(lin::hcat(acts.heads[0].back(), acts.heads[1].back()),
                          acts.heads[2].back());
  acts.classifier = nn::forward(net.classifier, acts.concat);
  return acts;
}

}  // namespace

Matrix multihead_forward(const MultiHeadNet& net,
                         const std::array<Matrix, 3>& domains) {
  return multihead_forward_full(net, domains).classifier.back();
}

double multihead_loss_grad(const MultiHeadNet& net,
                           const std::array<Matrix, 3>& domains,
                           const Matrix& targets, std::vector<double>* grad_out) {
  const auto acts = multihead_forward_full(net, domains);
  const double loss =
      nn::loss_value(acts.classifier.back(), targets, nn::LossKind::kBce);
  if (grad_out == nullptr) return loss;

  Matrix concat_grad;
  const auto cls_grads = nn::backward(net.classifier, acts.classifier, targets,
                                      nn::LossKind::kBce, &concat_grad);

  grad_out->clear();
  const std::size_t h = net.spec.head_out;
  for (std::size_t d = 0; d < 3; ++d) {
    const Matrix head_grad = lin::slice_cols(concat_grad, d * h, (d + 1) * h);
    const auto grads = nn::backward_from_output_gradient(
        net.heads[d], acts.heads[d], head_grad);
    const auto flat = nn::flatten_gradients(net.heads[d], grads);
    grad_out->insert(grad_out->end(), flat.begin(), flat.end());
  }
  const auto cls_flat = nn::flatten_gradients(net.classifier, cls_grads);
  grad_out->insert(grad_out->end(), cls_flat.begin(), cls_flat.end());
  return loss;
}

SiteClusterLabels split_assignment(const std::vector<smpc::PatientRef>& index,
                                   const std::vector<std::uint32_t>& labels) {
  if (index.size() != labels.size()) {
    throw ShapeError("split_assignment: registry and labels differ in size");
  }
  SiteClusterLabels per_site;
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto& v = per_site[index[i].site_id];
    if (v.size() <= index[i].row) v.resize(index[i].row + 1, 0);
    v[index[i].row] = labels[i];
  }
  return per_site;
}

void TrainContext::validate() const {
  if (sites == nullptr || schema == nullptr || splits == nullptr) {
    throw StateError("train context: sites, schema and splits are required");
  }
  if (splits->size() != sites->size()) {
    throw ShapeError("train context: one split per site required");
  }
  plan.validate();
  spec.validate();
}

namespace {

struct SiteClusterData {
  std::array<Matrix, 3> domains;
  Matrix targets;  // n x 1
  std::vector<std::uint32_t> rows;
};

SiteClusterData gather_rows(const cohort::SiteDataset& site,
                            const std::vector<std::uint32_t>& rows) {
  SiteClusterData data;
  data.rows = rows;
  for (int d = 0; d < 3; ++d) {
    const auto width = cohort::domain_row(site.records.front(), d).size();
    Matrix m(rows.size(), width);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto vec = cohort::domain_row(site.records[rows[r]], d);
      std::copy(vec.begin(), vec.end(), m.data() + r * width);
    }
    data.domains[static_cast<std::size_t>(d)] = std::move(m);
  }
  data.targets = Matrix(rows.size(), 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    data.targets(r, 0) = site.records[rows[r]].mortality;
  }
  return data;
}

fed::SiteTrainer make_predict_trainer(const TrainContext& ctx,
                                      const cohort::SiteDataset& site,
                                      std::vector<std::uint32_t> rows,
                                      std::size_t cluster,
                                      std::size_t param_count) {
  fed::SiteTrainer trainer;
  trainer.site_id = site.site_id;
  trainer.n_samples = rows.size();
  if (rows.empty()) {
    trainer.train = [](const std::vector<double>& params, std::size_t,
                       std::size_t) {
      return fed::LocalFit{params, 0.0};
    };
    return trainer;
  }

  auto data = std::make_shared<SiteClusterData>(gather_rows(site, rows));
  auto adam = std::make_shared<nn::AdamState>(param_count);
  const MultiHeadSpec spec = ctx.spec;
  const std::size_t batch_size = ctx.plan.batch_size;
  const std::uint64_t shuffle_seed =
      rng::derive(ctx.seed, "predict.shuffle",
                  static_cast<std::uint64_t>(site.site_id), cluster);

  trainer.train = [data, adam, spec, batch_size, shuffle_seed](
                      const std::vector<double>& params, std::size_t epochs,
                      std::size_t first_epoch) {
    MultiHeadNet net = make_multihead(spec);
    const auto layout = multihead_layout(net);
    std::vector<double> p = params;
    double loss_acc = 0.0;
    std::size_t batches = 0;
    const std::size_t n = data->targets.rows();

    fed::for_each_batch(
        n, epochs, first_epoch, batch_size, shuffle_seed,
        [&](const std::vector<std::uint32_t>& idx, std::size_t) {
          std::array<Matrix, 3> bd;
          for (std::size_t d = 0; d < 3; ++d) {
            const Matrix& full = data->domains[d];
            Matrix m(idx.size(), full.cols());
            for (std::size_t r = 0; r < idx.size(); ++r) {
              std::copy(full.data() + idx[r] * full.cols(),
                        full.data() + (idx[r] + 1) * full.cols(),
                        m.data() + r * full.cols());
            }
            bd[d] = std::move(m);
          }
          Matrix by(idx.size(), 1);
          for (std::size_t r = 0; r < idx.size(); ++r) {
            by(r, 0) = data->targets(idx[r], 0);
          }
          multihead_unflatten(net, p);
          std::vector<double> grad;
          loss_acc += multihead_loss_grad(net, bd, by, &grad);
          ++batches;
          nn::adam_step(*adam, p, grad, layout);
        });
    return fed::LocalFit{std::move(p),
                         batches > 0 ? loss_acc / static_cast<double>(batches)
                                     : 0.0};
  };
  return trainer;
}

std::vector<std::uint32_t> train_rows_in_cluster(
    const cohort::SplitIndex& split, const std::vector<std::uint32_t>& labels,
    std::size_t cluster, std::size_t k) {
  std::vector<std::uint32_t> rows;
  for (std::uint32_t r : split.train) {
    if (r >= labels.size()) {
      throw StateError("assignment does not cover training row " +
                       std::to_string(r));
    }
    if (k == 1 || labels[r] == cluster) rows.push_back(r);
  }
  return rows;
}

}  // namespace

ClusterModelSet train_clustered(const TrainContext& ctx,
                                const SiteClusterLabels& labels, std::size_t k) {
  ctx.validate();
  if (k < 1) throw ConfigError("train_clustered: k must be >= 1");
  const auto& sites = *ctx.sites;

  // Prototype for the shared layout and per-cluster seeded init.
  MultiHeadNet proto = make_multihead(ctx.spec);
  const std::size_t param_count = multihead_layout(proto).total;

  ClusterModelSet set;
  set.k = k;
  set.params.resize(k);

  std::vector<std::string> empty_clusters;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<fed::SiteTrainer> trainers;
    std::size_t total = 0;
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const auto it = labels.find(sites[s].site_id);
      std::vector<std::uint32_t> site_labels;
      if (it != labels.end()) {
        site_labels = it->second;
      } else if (k == 1) {
        site_labels.assign(sites[s].records.size(), 0);
      } else {
        throw StateError("train_clustered: no assignment for site " +
                         std::to_string(sites[s].site_id));
      }
      auto rows = train_rows_in_cluster((*ctx.splits)[s], site_labels, c, k);
      total += rows.size();
      trainers.push_back(make_predict_trainer(ctx, sites[s], std::move(rows), c,
                                              param_count));
    }
    if (total == 0) {
      empty_clusters.push_back(std::to_string(c));
      continue;
    }
    MultiHeadNet init_net = make_multihead(ctx.spec);
    rng::Rng init_rng(rng::derive(ctx.seed, "init.predict", c));
    multihead_glorot(init_net, init_rng);
    char session[48];
    std::snprintf(session, sizeof(session), "fed:%016llx:%zu",
                  static_cast<unsigned long long>(ctx.seed), c);
    const auto result = fed::run_federated(trainers, multihead_flatten(init_net),
                                           ctx.plan, ctx.bus, ctx.workers,
                                           session);
    set.params[c] = result.params;
  }
  if (!empty_clusters.empty()) {
    std::string joined;
    for (const auto& c : empty_clusters) {
      joined += joined.empty() ? c : ", " + c;
    }
    throw StateError("train_clustered: no training patients in cluster(s) " +
                     joined);
  }
  return set;
}

ClusterModelSet train_pcbfl(const TrainContext& ctx,
                            const SiteClusterLabels& labels, std::size_t k) {
  return train_clustered(ctx, labels, k);
}

SiteClusterLabels cbfl_assign(const std::vector<embed::EmbeddingMatrix>& embeddings,
                              std::size_t k, std::uint64_t seed, bool whole_site,
                              fed::Bus* bus, int workers) {
  if (embeddings.empty()) throw StateError("cbfl_assign: no embeddings");
  if (k > embeddings.size()) {
    throw ConfigError("cbfl_assign: k exceeds the number of sites");
  }
  // Sites reveal only their mean embedding vector.
  std::vector<const embed::EmbeddingMatrix*> sorted;
  for (const auto& e : embeddings) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->site_id < b->site_id; });

  const std::size_t dim = sorted.front()->values.cols();
  Matrix means(sorted.size(), dim);
  for (std::size_t s = 0; s < sorted.size(); ++s) {
    const Matrix& v = sorted[s]->values;
    for (std::size_t r = 0; r < v.rows(); ++r) {
      kern::ops().axpy(means.data() + s * dim, 1.0, v.data() + r * dim, dim);
    }
    kern::ops().scal(means.data() + s * dim,
                     1.0 / static_cast<double>(v.rows()), dim);
    if (bus != nullptr) {
      std::vector<double> payload(means.data() + s * dim,
                                  means.data() + (s + 1) * dim);
      bus->send({fed::MessageType::kSiteMeanEmbedding,
                 fed::site_address(sorted[s]->site_id), fed::server_address(),
                 "", std::move(payload), ""});
    }
  }

  if (bus != nullptr) {
    for (std::size_t s = 0; s < sorted.size(); ++s) {
      bus->receive(fed::server_address(), fed::MessageType::kSiteMeanEmbedding);
    }
  }
  const auto km = cluster::kmeans(means, k, rng::derive(seed, "cbfl.kmeans"),
                                  {.workers = workers});
  if (bus != nullptr) {
    for (const auto* e : sorted) {
      bus->send({fed::MessageType::kCentroids, fed::server_address(),
                 fed::site_address(e->site_id), "", km.centroids, ""});
      bus->receive(fed::site_address(e->site_id), fed::MessageType::kCentroids);
    }
  }

  // Each site assigns its patients to the nearest broadcast centroid.
  SiteClusterLabels result;
  for (std::size_t s = 0; s < sorted.size(); ++s) {
    const Matrix& v = sorted[s]->values;
    auto& labels = result[sorted[s]->site_id];
    labels.resize(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) {
      if (whole_site) {
        labels[r] = km.labels[s];
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        double dd = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double diff = v(r, j) - km.centroids(c, j);
          dd += diff * diff;
        }
        if (dd < best) {
          best = dd;
          arg = static_cast<std::uint32_t>(c);
        }
      }
      labels[r] = arg;
    }
    if (bus != nullptr) {
      bus->send({fed::MessageType::kClusterLabels, fed::server_address(),
                 fed::site_address(sorted[s]->site_id), "", labels, ""});
      bus->receive(fed::site_address(sorted[s]->site_id),
                   fed::MessageType::kClusterLabels);
    }
  }
  return result;
}

CbflResult train_cbfl(const TrainContext& ctx,
                      const std::vector<embed::EmbeddingMatrix>& embeddings,
                      std::size_t k, bool whole_site) {
  ctx.validate();
  CbflResult result;
  result.labels = cbfl_assign(embeddings, k, ctx.seed, whole_site, ctx.bus,
                              ctx.workers);
  result.models = train_clustered(ctx, result.labels, k);
  return result;
}

std::vector<double> train_fedavg(const TrainContext& ctx) {
  return train_clustered(ctx, {}, 1).params[0];
}

std::vector<std::pair<int, std::vector<double>>> train_single_site(
    const TrainContext& ctx) {
  ctx.validate();
  std::vector<std::pair<int, std::vector<double>>> out(ctx.sites->size());
  parallel_for_each(ctx.sites->size(), ctx.workers, [&](std::size_t s) {
    TrainContext one = ctx;
    one.workers = 1;
    const std::vector<cohort::SiteDataset> site{(*ctx.sites)[s]};
    const std::vector<cohort::SplitIndex> split{(*ctx.splits)[s]};
    one.sites = &site;
    one.splits = &split;
    out[s] = {site[0].site_id, train_clustered(one, {}, 1).params[0]};
  });
  return out;
}

std::vector<double> train_centralized(const TrainContext& ctx) {
  ctx.validate();
  // Pool every site's training rows into one pseudo-site and train it for
  // the same total epoch budget in a single round.
  cohort::SiteDataset pooled;
  pooled.site_id = -1;
  cohort::SplitIndex pooled_split;
  pooled_split.ratio = (*ctx.splits)[0].ratio;
  for (std::size_t s = 0; s < ctx.sites->size(); ++s) {
    const auto& site = (*ctx.sites)[s];
    for (std::uint32_t r : (*ctx.splits)[s].train) {
      pooled.records.push_back(site.records[r]);
      pooled_split.train.push_back(
          static_cast<std::uint32_t>(pooled.records.size() - 1));
    }
  }
  if (pooled.records.empty()) {
    throw StateError("train_centralized: no training records");
  }

  TrainContext central = ctx;
  central.workers = 1;
  central.plan = fed::RoundPlan{1, ctx.plan.rounds * ctx.plan.local_epochs,
                                ctx.plan.batch_size};
  const std::vector<cohort::SiteDataset> sites{std::move(pooled)};
  const std::vector<cohort::SplitIndex> splits{std::move(pooled_split)};
  central.sites = &sites;
  central.splits = &splits;
  return train_clustered(central, {}, 1).params[0];
}

std::vector<double> predict_probs(const MultiHeadSpec& spec,
                                  const std::vector<double>& params,
                                  const cohort::SiteDataset& site,
                                  const std::vector<std::uint32_t>& rows) {
  MultiHeadNet net = make_multihead(spec);
  multihead_unflatten(net, params);
  const auto data = gather_rows(site, rows);
  const Matrix probs = multihead_forward(net, data.domains);
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = probs(r, 0);
  return out;
}

std::vector<double> predict_clustered(const MultiHeadSpec& spec,
                                      const ClusterModelSet& models,
                                      const cohort::SiteDataset& site,
                                      const std::vector<std::uint32_t>& rows,
                                      const SiteClusterLabels& labels) {
  const auto it = labels.find(site.site_id);
  if (it == labels.end()) {
    throw StateError("predict: no cluster assignment for site " +
                     std::to_string(site.site_id));
  }
  std::vector<double> out(rows.size());
  // Group rows by cluster, one forward pass per model.
  for (std::size_t c = 0; c < models.k; ++c) {
    std::vector<std::uint32_t> subset;
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= it->second.size()) {
        throw StateError("predict: patient row " + std::to_string(rows[i]) +
                         " has no cluster assignment");
      }
      if (it->second[rows[i]] == c) {
        subset.push_back(rows[i]);
        positions.push_back(i);
      }
    }
    if (subset.empty()) continue;
    const auto probs = predict_probs(spec, models.params[c], site, subset);
    for (std::size_t i = 0; i < subset.size(); ++i) out[positions[i]] = probs[i];
  }
  return out;
}

void export_predictions_csv(const std::string& path,
                            const std::vector<PredictionRow>& rows) {
  io::CsvTable table;
  table.header = {"patient_id", "site_id", "cluster", "y_true",
                  "y_prob",     "regime",  "seed"};
  for (const auto& r : rows) {
    table.rows.push_back({r.patient_id, std::to_string(r.site_id),
                          std::to_string(r.cluster), std::to_string(r.y_true),
                          io::format_double(r.y_prob), r.regime,
                          std::to_string(r.seed)});
  }
  io::write_csv(path, table);
}

std::vector<PredictionRow> import_predictions_csv(const std::string& path) {
  const auto table = io::read_csv(path);
  const auto c_pid = table.column("patient_id");
  const auto c_site = table.column("site_id");
  const auto c_cluster = table.column("cluster");
  const auto c_true = table.column("y_true");
  const auto c_prob = table.column("y_prob");
  const auto c_regime = table.column("regime");
  const auto c_seed = table.column("seed");
  std::vector<PredictionRow> rows;
  rows.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    PredictionRow row;
    row.patient_id = r[c_pid];
    row.site_id = static_cast<int>(io::parse_int(r[c_site], path));
    row.cluster = static_cast<int>(io::parse_int(r[c_cluster], path));
    row.y_true = static_cast<int>(io::parse_int(r[c_true], path));
    row.y_prob = io::parse_double(r[c_prob], path);
    row.regime = r[c_regime];
    row.seed = io::parse_uint(r[c_seed], path);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fedclust::predict
