#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedclust::cohort {

// Three fixed feature domains: sparse diagnosis counts, sparse drug counts,
// and a short dense block of physiologic measurements.
struct FeatureSchema {
  std::size_t n_diagnosis = 483;
  std::size_t n_drugs = 1056;
  std::size_t n_physio = 10;

  std::size_t total() const { return n_diagnosis + n_drugs + n_physio; }
  void validate() const;

  bool operator==(const FeatureSchema&) const = default;
};

enum class Region : std::uint8_t { kMidwest = 0, kNortheast, kSouth, kWest };

const char* region_name(Region r);
Region parse_region(const std::string& name);

struct PatientRecord {
  std::string patient_id;
  int site_id = 0;
  Region region = Region::kMidwest;
  std::vector<double> diagnosis;
  std::vector<double> drugs;
  std::vector<double> physio;
  int mortality = 0;
  int planted_group = -1;  // synthetic cohorts only; -1 when unknown

  // Feature access by global index: diagnosis, then drugs, then physio.
  double feature(const FeatureSchema& schema, std::size_t j) const;
  double& feature(const FeatureSchema& schema, std::size_t j);
};

struct SiteDataset {
  int site_id = 0;
  Region region = Region::kMidwest;
  std::vector<PatientRecord> records;
};

struct CohortConfig {
  std::size_t n_sites = 20;
  std::size_t patients_per_site = 250;
  std::size_t n_planted_groups = 3;
  // Symmetric Dirichlet concentration for per-site group mixing; small values
  // give strongly non-IID sites.
  double site_group_mixing = 0.5;
  // Per-group baseline mortality; resized/defaulted in validate_and_fill().
  std::vector<double> mortality_base_rates;
  std::uint64_t seed = 0;

  void validate() const;
  // Returns the effective base rates (defaults centered near 20% positives).
  std::vector<double> effective_base_rates() const;
};

// Schema-compatible synthetic multi-site cohort with planted severity groups.
// Bit-reproducible from (config, schema): every site draws a Dirichlet group
// mixture, each patient a group, a latent severity, group-conditioned physio
// Gaussians, sparse overdispersed counts, and a Bernoulli mortality label.
std::vector<SiteDataset> generate_synthetic(const CohortConfig& config,
                                            const FeatureSchema& schema);

// One CSV per site. Header: patient_id,site_id,region,mortality
// [,planted_group],diag_*,drug_*,physio_*. Counts must be non-negative
// integers; missing values are rejected rather than imputed.
std::vector<SiteDataset> ingest_csv(const std::vector<std::string>& paths,
                                    const FeatureSchema& schema);

void export_csv(const SiteDataset& site, const FeatureSchema& schema,
                const std::string& path);

// ---- 0-1 normalization -------------------------------------------------------

struct FeatureExtremes {
  std::vector<double> mins;
  std::vector<double> maxs;
};

struct MinMaxTable {
  std::vector<double> mins;
  std::vector<double> maxs;
};

// Per-site extremes: the only per-feature information a site reveals.
FeatureExtremes site_extremes(const SiteDataset& site,
                              const FeatureSchema& schema);
MinMaxTable reduce_extremes(const std::vector<FeatureExtremes>& all);
// x -> (x - min) / (max - min); constant features map to 0.
void apply_normalization(SiteDataset& site, const FeatureSchema& schema,
                         const MinMaxTable& table);

// Convenience composition of the three steps above; equals centralized
// min/max normalization of the pooled data exactly.
MinMaxTable normalize_01(std::vector<SiteDataset>& sites,
                         const FeatureSchema& schema);

void save_minmax_json(const std::string& path, const MinMaxTable& table);
MinMaxTable load_minmax_json(const std::string& path);

// ---- train/test split ---------------------------------------------------------

struct SplitIndex {
  std::vector<std::uint32_t> train;  // local row indices
  std::vector<std::uint32_t> test;
  double ratio = 0.7;
  std::uint64_t seed = 0;
};

// Uniformly random partition, reproducible from the seed. Throws on sites
// with fewer than two patients.
SplitIndex split(const SiteDataset& site, double ratio, std::uint64_t seed);

// Domain slice of a site as a dense matrix (rows = patients in record order).
// domain: 0 diagnosis, 1 drugs, 2 physio.
std::vector<double> domain_row(const PatientRecord& rec, int domain);

}  // namespace fedclust::cohort
