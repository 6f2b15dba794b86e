#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedclust/cohort/cohort.hpp"
#include "fedclust/fed/bus.hpp"
#include "fedclust/fed/fedavg.hpp"
#include "fedclust/linalg/matrix.hpp"
#include "fedclust/nn/net.hpp"
#include "fedclust/rand/rng.hpp"

namespace fedclust::embed {

inline constexpr std::array<const char*, 3> kDomainNames = {"diagnosis", "drug",
                                                            "physio"};

// Six-layer denoising autoencoder: three encoder layers ending at the latent
// width, mirrored by three decoder layers back to the input width. Hidden
// layers are ReLU, the latent layer is identity (latents are unbounded reals;
// L2 normalization happens later), the reconstruction layer is sigmoid.
struct AutoencoderSpec {
  int domain = 0;  // 0 diagnosis, 1 drug, 2 physio
  std::size_t input_width = 0;
  std::vector<std::size_t> encoder_widths = {128, 64, 16};
  double corruption_rate = 0.3;
  // Initial value of the reconstruction layer's bias. Sparse count domains
  // start at their occupancy prior (sigmoid(-3) ~ 0.05) so the mean signal
  // does not recruit the whole bias chain and swamp the latents.
  double output_bias_init = 0.0;

  std::size_t latent_dim() const { return encoder_widths.back(); }
  void validate() const;
};

nn::DenseNet make_autoencoder(const AutoencoderSpec& spec);

// Each entry independently forced to 0 with probability `rate`.
Matrix corrupt(const Matrix& batch, double rate, rng::Rng& rng);

// Site's domain slice as a dense matrix, rows in record order.
Matrix domain_matrix(const cohort::SiteDataset& site, int domain);

struct DomainAutoencoders {
  std::array<AutoencoderSpec, 3> specs;
  std::array<std::vector<double>, 3> params;

  bool trained() const {
    return !params[0].empty() && !params[1].empty() && !params[2].empty();
  }
};

// Federated denoising-autoencoder training for one domain: MSE between the
// reconstruction of the corrupted batch and the clean batch, FedAvg across
// sites. Corruption masks are fresh per batch per epoch.
std::vector<double> train_domain_autoencoder(
    const std::vector<cohort::SiteDataset>& sites, const AutoencoderSpec& spec,
    const fed::RoundPlan& plan, std::uint64_t root_seed, fed::Bus* bus = nullptr,
    int workers = 1, std::vector<double>* round_losses = nullptr,
    std::vector<fed::TraceRow>* trace = nullptr);

DomainAutoencoders train_all_domains(const std::vector<cohort::SiteDataset>& sites,
                                     const cohort::FeatureSchema& schema,
                                     const std::vector<std::size_t>& encoder_widths,
                                     double corruption_rate,
                                     const fed::RoundPlan& plan,
                                     std::uint64_t root_seed,
                                     fed::Bus* bus = nullptr, int workers = 1);

struct EmbeddingMatrix {
  int site_id = 0;
  std::vector<std::string> patient_ids;
  Matrix values;  // rows = patients at the site, cols = D
};

// Deterministic, corruption-free encoder pass per domain; latents
// concatenated in fixed domain order (diagnosis, drug, physio).
EmbeddingMatrix embed_patients(const cohort::SiteDataset& site,
                               const DomainAutoencoders& aes);

// Debug/hand-off CSV: patient_id, site_id, e_1..e_D.
void export_embeddings_csv(const EmbeddingMatrix& em, const std::string& path);
EmbeddingMatrix import_embeddings_csv(const std::string& path);

}  // namespace fedclust::embed
