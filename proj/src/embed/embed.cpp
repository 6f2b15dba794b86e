#include "fedclust/embed/embed.hpp"

#include <memory>

#include "fedclust/errors.hpp"
#include "fedclust/io/csv.hpp"

namespace fedclust::embed {

void AutoencoderSpec::validate() const {
  if (domain < 0 || domain > 2) throw ConfigError("autoencoder: bad domain index");
  if (input_width < 1) throw ConfigError("autoencoder: input width must be >= 1");
  if (encoder_widths.size() != 3) {
    throw ConfigError("autoencoder: exactly 3 encoder layers required");
  }
  for (std::size_t w : encoder_widths) {
    if (w < 1) throw ConfigError("autoencoder: encoder widths must be >= 1");
  }
  if (!(corruption_rate >= 0.0 && corruption_rate < 1.0)) {
    throw ConfigError("autoencoder: corruption rate must lie in [0,1)");
  }
}

nn::DenseNet make_autoencoder(const AutoencoderSpec& spec) {
  spec.validate();
  using nn::Activation;
  const auto& e = spec.encoder_widths;
  return nn::make_net(
      {spec.input_width, e[0], e[1], e[2], e[1], e[0], spec.input_width},
      {Activation::kRelu, Activation::kRelu, Activation::kIdentity,
       Activation::kRelu, Activation::kRelu, Activation::kSigmoid});
}

Matrix corrupt(const Matrix& batch, double rate, rng::Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("corrupt: rate must lie in [0,1)");
  }
  Matrix out = batch;
  if (rate == 0.0) return out;
  for (auto& v : out.values()) {
    if (rng.uniform() < rate) v = 0.0;
  }
  return out;
}

Matrix domain_matrix(const cohort::SiteDataset& site, int domain) {
  if (site.records.empty()) throw StateError("domain_matrix: empty site");
  const auto width = cohort::domain_row(site.records.front(), domain).size();
  Matrix m(site.records.size(), width);
  for (std::size_t r = 0; r < site.records.size(); ++r) {
    const auto row = cohort::domain_row(site.records[r], domain);
    if (row.size() != width) {
      throw ShapeError("domain_matrix: ragged records at site " +
                       std::to_string(site.site_id));
    }
    std::copy(row.begin(), row.end(), m.data() + r * width);
  }
  return m;
}

namespace {

fed::SiteTrainer make_ae_trainer(const cohort::SiteDataset& site,
                                 const AutoencoderSpec& spec,
                                 std::size_t batch_size,
                                 std::uint64_t root_seed,
                                 std::size_t param_count) {
  fed::SiteTrainer trainer;
  trainer.site_id = site.site_id;
  trainer.n_samples = site.records.size();

  auto data = std::make_shared<Matrix>(domain_matrix(site, spec.domain));
  // Optimizer moments are site-local state; they persist across rounds and
  // are never transmitted.
  auto adam = std::make_shared<nn::AdamState>(param_count);
  const auto sid = static_cast<std::uint64_t>(site.site_id);
  const auto dom = static_cast<std::uint64_t>(spec.domain);
  const std::uint64_t shuffle_seed = rng::derive(root_seed, "ae.shuffle", sid, dom);
  const std::uint64_t corrupt_seed = rng::derive(root_seed, "ae.corrupt", sid, dom);
  const double rate = spec.corruption_rate;

  trainer.train = [data, adam, spec, shuffle_seed, corrupt_seed, rate,
                   batch_size](const std::vector<double>& params,
                               std::size_t epochs, std::size_t first_epoch) {
    nn::DenseNet net = make_autoencoder(spec);
    const auto layout = nn::layout_of(net);
    std::vector<double> p = params;

    fed::LocalFit fit;
    double loss_acc = 0.0;
    std::size_t batches = 0;
    std::size_t current_epoch = static_cast<std::size_t>(-1);
    std::unique_ptr<rng::Rng> mask_rng;

    fed::for_each_batch(
        data->rows(), epochs, first_epoch, batch_size, shuffle_seed,
        [&](const std::vector<std::uint32_t>& idx, std::size_t epoch) {
          if (epoch != current_epoch) {
            current_epoch = epoch;
            mask_rng = std::make_unique<rng::Rng>(
                rng::derive(corrupt_seed, "epoch", epoch));
          }
          Matrix clean(idx.size(), data->cols());
          for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy(data->data() + idx[r] * data->cols(),
                      data->data() + (idx[r] + 1) * data->cols(),
                      clean.data() + r * clean.cols());
          }
          const Matrix noisy = corrupt(clean, rate, *mask_rng);
          nn::unflatten(net, p);
          const auto acts = nn::forward(net, noisy);
          loss_acc += nn::loss_value(acts.back(), clean, nn::LossKind::kMse);
          ++batches;
          const auto grads = nn::backward(net, acts, clean, nn::LossKind::kMse);
          nn::adam_step(*adam, p, nn::flatten_gradients(net, grads), layout);
        });
    fit.params = std::move(p);
    fit.mean_loss = batches > 0 ? loss_acc / static_cast<double>(batches) : 0.0;
    return fit;
  };
  return trainer;
}

}  // namespace

std::vector<double> train_domain_autoencoder(
    const std::vector<cohort::SiteDataset>& sites, const AutoencoderSpec& spec,
    const fed::RoundPlan& plan, std::uint64_t root_seed, fed::Bus* bus,
    int workers, std::vector<double>* round_losses,
    std::vector<fed::TraceRow>* trace) {
  spec.validate();
  plan.validate();
  if (sites.empty()) throw StateError("train_domain_autoencoder: no sites");

  nn::DenseNet proto = make_autoencoder(spec);
  rng::Rng init_rng(
      rng::derive(root_seed, "ae.init", static_cast<std::uint64_t>(spec.domain)));
  nn::glorot_init(proto, init_rng);
  std::fill(proto.layers.back().bias.begin(), proto.layers.back().bias.end(),
            spec.output_bias_init);
  const auto init = nn::flatten(proto);

  std::vector<fed::SiteTrainer> trainers;
  trainers.reserve(sites.size());
  for (const auto& site : sites) {
    trainers.push_back(
        make_ae_trainer(site, spec, plan.batch_size, root_seed, init.size()));
  }

  auto result = fed::run_federated(trainers, init, plan, bus, workers,
                                   std::string("ae:") +
                                       kDomainNames[static_cast<std::size_t>(spec.domain)]);
  if (round_losses != nullptr) *round_losses = result.round_losses;
  if (trace != nullptr) *trace = std::move(result.site_trace);
  return result.params;
}

DomainAutoencoders train_all_domains(const std::vector<cohort::SiteDataset>& sites,
                                     const cohort::FeatureSchema& schema,
                                     const std::vector<std::size_t>& encoder_widths,
                                     double corruption_rate,
                                     const fed::RoundPlan& plan,
                                     std::uint64_t root_seed, fed::Bus* bus,
                                     int workers) {
  DomainAutoencoders aes;
  const std::array<std::size_t, 3> widths = {schema.n_diagnosis, schema.n_drugs,
                                             schema.n_physio};
  for (int d = 0; d < 3; ++d) {
    AutoencoderSpec spec;
    spec.domain = d;
    spec.input_width = widths[static_cast<std::size_t>(d)];
    spec.encoder_widths = encoder_widths;
    spec.corruption_rate = corruption_rate;
    spec.output_bias_init = d == 2 ? 0.0 : -3.0;  // counts are sparse
    aes.specs[static_cast<std::size_t>(d)] = spec;
    aes.params[static_cast<std::size_t>(d)] =
        train_domain_autoencoder(sites, spec, plan, root_seed, bus, workers);
  }
  return aes;
}

EmbeddingMatrix embed_patients(const cohort::SiteDataset& site,
                               const DomainAutoencoders& aes) {
  if (!aes.trained()) {
    throw StateError("embed_patients: autoencoders are not trained");
  }
  EmbeddingMatrix em;
  em.site_id = site.site_id;
  em.patient_ids.reserve(site.records.size());
  for (const auto& r : site.records) em.patient_ids.push_back(r.patient_id);

  Matrix out;
  for (int d = 0; d < 3; ++d) {
    const auto& spec = aes.specs[static_cast<std::size_t>(d)];
    nn::DenseNet net = make_autoencoder(spec);
    nn::unflatten(net, aes.params[static_cast<std::size_t>(d)]);
    // Encoder half only: layers 0..2 end at the latent width.
    nn::DenseNet encoder;
    encoder.layers.assign(net.layers.begin(), net.layers.begin() + 3);
    const Matrix latent = nn::predict(encoder, domain_matrix(site, d));
    out = d == 0 ? latent : lin::hcat(out, latent);
  }
  em.values = std::move(out);
  return em;
}

void export_embeddings_csv(const EmbeddingMatrix& em, const std::string& path) {
  io::CsvTable table;
  table.header = {"patient_id", "site_id"};
  for (std::size_t j = 1; j <= em.values.cols(); ++j) {
    table.header.push_back("e_" + std::to_string(j));
  }
  for (std::size_t r = 0; r < em.values.rows(); ++r) {
    std::vector<std::string> row{em.patient_ids[r], std::to_string(em.site_id)};
    for (std::size_t j = 0; j < em.values.cols(); ++j) {
      row.push_back(io::format_double(em.values(r, j)));
    }
    table.rows.push_back(std::move(row));
  }
  io::write_csv(path, table);
}

EmbeddingMatrix import_embeddings_csv(const std::string& path) {
  const io::CsvTable table = io::read_csv(path);
  const std::size_t c_pid = table.column("patient_id");
  const std::size_t c_site = table.column("site_id");
  std::vector<std::size_t> ecols;
  for (std::size_t j = 1; table.header.size() >= 2 + j; ++j) {
    ecols.push_back(table.column("e_" + std::to_string(j)));
  }
  EmbeddingMatrix em;
  em.values = Matrix(table.rows.size(), ecols.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    em.patient_ids.push_back(row[c_pid]);
    if (r == 0) {
      em.site_id = static_cast<int>(io::parse_int(row[c_site], path + " site_id"));
    }
    for (std::size_t j = 0; j < ecols.size(); ++j) {
      em.values(r, j) = io::parse_double(row[ecols[j]], path + " embedding");
    }
  }
  return em;
}

}  // namespace fedclust::embed
