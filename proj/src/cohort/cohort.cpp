#include "fedclust/cohort/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "fedclust/errors.hpp"
#include "fedclust/io/csv.hpp"
#include "fedclust/rand/rng.hpp"
#include "json.hpp"

namespace fedclust::cohort {

namespace {

constexpr int kMaxDiagnosisNonzero = 20;
constexpr int kMaxDrugNonzero = 40;
// Fraction of a patient's nonzero count features drawn from the planted
// group's signature block (the rest is uniform background).
constexpr double kSignatureAffinity = 0.75;
constexpr double kPhysioGroupShift = 5.0;
// Latent severity is expressed on one shared physio band whose direction
// alternates by group, while mortality always rises with severity. A single
// global model therefore needs a group-by-feature interaction that
// per-cluster models do not.
constexpr double kSeverityLoading = 0.0;
constexpr double kSeveritySlope = 1.8;
constexpr double kDxSeverityRate = 5.0;
constexpr int kDxSeverityCap = 12;
constexpr double kRxSeverityRate = 10.0;
constexpr int kRxSeverityCap = 24;
constexpr double kSeverityExponent = 0.9;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

std::size_t sample_categorical(rng::Rng& rng, const std::vector<double>& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

// Overdispersed positive count: 1 + Poisson(Gamma(1.2, 0.9)), a
// negative-binomial style draw (variance exceeds the mean) with a tame tail
// so 0-1 normalization keeps typical values well off zero.
double overdispersed_count(rng::Rng& rng) {
  return 1.0 + static_cast<double>(rng.poisson(rng.gamma(1.2, 0.9)));
}

// Count-domain layout: the first 80% of features is split into per-group
// signature blocks; the last 20% is a severity block shared by every group.
// Activity in the shared block scales with exp(direction * z), so the same
// features read "sicker" in even groups and "healthier" in odd ones.
void sample_sparse_counts(rng::Rng& rng, std::vector<double>& dst,
                          std::size_t n_features, std::size_t group,
                          std::size_t n_groups, double severity,
                          double base_rate, double severity_rate,
                          int max_signature, int max_severity) {
  const double z = std::clamp(severity, -2.0, 2.0);
  const std::size_t signature_region = std::max<std::size_t>(n_groups, n_features * 4 / 5);
  const std::size_t block = std::max<std::size_t>(1, signature_region / n_groups);
  const std::size_t block_start = std::min(group * block, signature_region - 1);
  const std::size_t block_end = std::min(block_start + block, signature_region);

  auto active = static_cast<int>(1 + rng.poisson(base_rate));
  active = std::min(active, max_signature);
  for (int i = 0; i < active; ++i) {
    std::size_t j;
    if (rng.uniform() < kSignatureAffinity && block_end > block_start) {
      j = block_start + rng.uniform_int(block_end - block_start);
    } else {
      j = rng.uniform_int(n_features);
    }
    dst[j] += overdispersed_count(rng);
  }

  if (signature_region < n_features) {
    // The severity block is shared by every group, split into a common strip
    // and two group-rotated strips. Group g expresses severity along a ray
    // at angle 2*pi*g/G in the (A, B) activity plane, so no two groups share
    // a severity direction yet no single linear readout fits them all.
    const std::size_t sev_width = n_features - signature_region;
    const std::size_t strip = sev_width / 3;
    int used = 0;
    auto emit = [&](std::size_t start, std::size_t width, double rate_scale,
                    double dir_component) {
      if (width == 0 || used >= max_severity) return;
      auto active = static_cast<int>(rng.poisson(
          rate_scale * severity_rate *
          std::exp(kSeverityExponent * dir_component * z)));
      active = std::min(active, max_severity - used);
      used += active;
      for (int i = 0; i < active; ++i) {
        const std::size_t j = start + rng.uniform_int(width);
        dst[j] += 1.0 + static_cast<double>(rng.poisson(0.5));
      }
    };
    const double angle = 2.0 * 3.141592653589793 * static_cast<double>(group) /
                         static_cast<double>(n_groups);
    emit(signature_region, strip, 0.1, 1.0);  // common strip
    emit(signature_region + strip, strip, 0.45, std::cos(angle));
    emit(signature_region + 2 * strip, sev_width - 2 * strip, 0.45,
         std::sin(angle));
  }
}

}  // namespace

void FeatureSchema::validate() const {
  if (n_diagnosis < 1 || n_drugs < 1 || n_physio < 1) {
    throw ConfigError("schema: every feature domain needs at least 1 feature");
  }
}

const char* region_name(Region r) {
  switch (r) {
    case Region::kMidwest:
      return "Midwest";
    case Region::kNortheast:
      return "Northeast";
    case Region::kSouth:
      return "South";
    case Region::kWest:
      return "West";
  }
  return "?";
}

Region parse_region(const std::string& name) {
  if (name == "Midwest") return Region::kMidwest;
  if (name == "Northeast") return Region::kNortheast;
  if (name == "South") return Region::kSouth;
  if (name == "West") return Region::kWest;
  throw ParseError("unknown region '" + name + "'");
}

double PatientRecord::feature(const FeatureSchema& schema, std::size_t j) const {
  if (j < schema.n_diagnosis) return diagnosis[j];
  j -= schema.n_diagnosis;
  if (j < schema.n_drugs) return drugs[j];
  j -= schema.n_drugs;
  return physio[j];
}

double& PatientRecord::feature(const FeatureSchema& schema, std::size_t j) {
  if (j < schema.n_diagnosis) return diagnosis[j];
  j -= schema.n_diagnosis;
  if (j < schema.n_drugs) return drugs[j];
  j -= schema.n_drugs;
  return physio[j];
}

void CohortConfig::validate() const {
  if (n_sites < 1) throw ConfigError("cohort: n_sites must be >= 1");
  if (patients_per_site < 1) {
    throw ConfigError("cohort: patients_per_site must be >= 1");
  }
  if (n_planted_groups < 1) {
    throw ConfigError("cohort: n_planted_groups must be >= 1");
  }
  if (!(site_group_mixing > 0.0)) {
    throw ConfigError("cohort: site_group_mixing must be > 0");
  }
  if (!mortality_base_rates.empty() &&
      mortality_base_rates.size() != n_planted_groups) {
    throw ConfigError("cohort: mortality_base_rates must have one rate per group");
  }
  for (double r : mortality_base_rates) {
    if (!(r > 0.0 && r < 1.0)) {
      throw ConfigError("cohort: mortality base rates must lie in (0,1)");
    }
  }
}

std::vector<double> CohortConfig::effective_base_rates() const {
  if (!mortality_base_rates.empty()) return mortality_base_rates;
  // Defaults straddle a 20% overall positive rate.
  std::vector<double> rates(n_planted_groups);
  if (n_planted_groups == 1) {
    rates[0] = 0.2;
    return rates;
  }
  for (std::size_t g = 0; g < n_planted_groups; ++g) {
    const double t =
        static_cast<double>(g) / static_cast<double>(n_planted_groups - 1);
    rates[g] = 0.07 + t * (0.21 - 0.07);
  }
  return rates;
}

std::vector<SiteDataset> generate_synthetic(const CohortConfig& config,
                                            const FeatureSchema& schema) {
  config.validate();
  schema.validate();
  const std::size_t n_groups = config.n_planted_groups;
  const auto rates = config.effective_base_rates();

  std::vector<SiteDataset> sites(config.n_sites);
  for (std::size_t s = 0; s < config.n_sites; ++s) {
    SiteDataset& site = sites[s];
    site.site_id = static_cast<int>(s);
    site.region = static_cast<Region>(s % 4);

    rng::Rng rng(rng::derive(config.seed, "cohort.site", s));
    const std::vector<double> mix =
        rng.dirichlet(std::vector<double>(n_groups, config.site_group_mixing));

    site.records.resize(config.patients_per_site);
    for (std::size_t p = 0; p < config.patients_per_site; ++p) {
      PatientRecord& rec = site.records[p];
      char id[32];
      std::snprintf(id, sizeof(id), "s%02zu_p%04zu", s, p);
      rec.patient_id = id;
      rec.site_id = site.site_id;
      rec.region = site.region;

      const std::size_t g = sample_categorical(rng, mix);
      rec.planted_group = static_cast<int>(g);
      const double severity = rng.normal();

      const double direction = (g % 2 == 0) ? 1.0 : -1.0;
      rec.physio.resize(schema.n_physio);
      for (std::size_t j = 0; j < schema.n_physio; ++j) {
        const bool elevated = (j % n_groups) == g;
        const double load =
            (j % n_groups) == 0 ? direction * kSeverityLoading : 0.0;
        if (elevated) {
          rec.physio[j] = kPhysioGroupShift + load * severity + rng.normal();
        } else {
          rec.physio[j] = 0.8 * std::fabs(rng.normal()) + load * severity;
        }
      }

      rec.diagnosis.assign(schema.n_diagnosis, 0.0);
      sample_sparse_counts(rng, rec.diagnosis, schema.n_diagnosis, g, n_groups,
                           severity, 8.0, kDxSeverityRate, 8, kDxSeverityCap);
      rec.drugs.assign(schema.n_drugs, 0.0);
      sample_sparse_counts(rng, rec.drugs, schema.n_drugs, g, n_groups,
                           severity, 16.0, kRxSeverityRate, 16, kRxSeverityCap);

      const double p_mort = sigmoid(logit(rates[g]) + kSeveritySlope * severity);
      rec.mortality = rng.bernoulli(p_mort) ? 1 : 0;
    }
  }
  return sites;
}

std::vector<SiteDataset> ingest_csv(const std::vector<std::string>& paths,
                                    const FeatureSchema& schema) {
  schema.validate();
  std::vector<SiteDataset> sites;
  sites.reserve(paths.size());
  for (const auto& path : paths) {
    const io::CsvTable table = io::read_csv(path);

    const std::size_t c_pid = table.column("patient_id");
    const std::size_t c_site = table.column("site_id");
    const std::size_t c_region = table.column("region");
    const std::size_t c_mort = table.column("mortality");
    std::size_t c_group = table.header.size();
    for (std::size_t i = 0; i < table.header.size(); ++i) {
      if (table.header[i] == "planted_group") c_group = i;
    }

    auto find_domain = [&](const std::string& prefix, std::size_t count) {
      std::vector<std::size_t> cols;
      for (std::size_t j = 1; j <= count; ++j) {
        cols.push_back(table.column(prefix + std::to_string(j)));
      }
      return cols;
    };
    const auto diag_cols = find_domain("diag_", schema.n_diagnosis);
    const auto drug_cols = find_domain("drug_", schema.n_drugs);
    const auto phys_cols = find_domain("physio_", schema.n_physio);

    SiteDataset site;
    bool first_row = true;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto& row = table.rows[r];
      const std::string where =
          path + " row " + std::to_string(r + 2);  // header is line 1
      PatientRecord rec;
      rec.patient_id = row[c_pid];
      rec.site_id =
          static_cast<int>(io::parse_int(row[c_site], where + " site_id"));
      rec.region = parse_region(row[c_region]);
      const long long mort = io::parse_int(row[c_mort], where + " mortality");
      if (mort != 0 && mort != 1) {
        throw ParseError(where + " mortality: value must be 0 or 1");
      }
      rec.mortality = static_cast<int>(mort);
      if (c_group < table.header.size() && !row[c_group].empty()) {
        rec.planted_group =
            static_cast<int>(io::parse_int(row[c_group], where + " planted_group"));
      }

      auto read_counts = [&](const std::vector<std::size_t>& cols,
                             const std::string& prefix) {
        std::vector<double> out(cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j) {
          const std::string ctx =
              where + " " + prefix + std::to_string(j + 1);
          const double v = io::parse_double(row[cols[j]], ctx);
          if (v < 0.0) throw ParseError(ctx + ": negative count " + row[cols[j]]);
          if (v != std::floor(v)) {
            throw ParseError(ctx + ": count must be an integer, got " +
                             row[cols[j]]);
          }
          out[j] = v;
        }
        return out;
      };
      rec.diagnosis = read_counts(diag_cols, "diag_");
      rec.drugs = read_counts(drug_cols, "drug_");
      rec.physio.resize(phys_cols.size());
      for (std::size_t j = 0; j < phys_cols.size(); ++j) {
        const std::string ctx = where + " physio_" + std::to_string(j + 1);
        rec.physio[j] = io::parse_double(row[phys_cols[j]], ctx);
        if (!std::isfinite(rec.physio[j])) {
          throw ParseError(ctx + ": non-finite value");
        }
      }

      if (first_row) {
        site.site_id = rec.site_id;
        site.region = rec.region;
        first_row = false;
      } else if (rec.site_id != site.site_id) {
        throw ParseError(where + ": mixed site_id values within one file");
      }
      site.records.push_back(std::move(rec));
    }
    sites.push_back(std::move(site));
  }
  return sites;
}

void export_csv(const SiteDataset& site, const FeatureSchema& schema,
                const std::string& path) {
  io::CsvTable table;
  table.header = {"patient_id", "site_id", "region", "mortality",
                  "planted_group"};
  for (std::size_t j = 1; j <= schema.n_diagnosis; ++j) {
    table.header.push_back("diag_" + std::to_string(j));
  }
  for (std::size_t j = 1; j <= schema.n_drugs; ++j) {
    table.header.push_back("drug_" + std::to_string(j));
  }
  for (std::size_t j = 1; j <= schema.n_physio; ++j) {
    table.header.push_back("physio_" + std::to_string(j));
  }
  for (const auto& rec : site.records) {
    std::vector<std::string> row;
    row.reserve(table.header.size());
    row.push_back(rec.patient_id);
    row.push_back(std::to_string(rec.site_id));
    row.push_back(region_name(rec.region));
    row.push_back(std::to_string(rec.mortality));
    row.push_back(rec.planted_group >= 0 ? std::to_string(rec.planted_group)
                                         : std::string());
    for (double v : rec.diagnosis) row.push_back(io::format_double(v));
    for (double v : rec.drugs) row.push_back(io::format_double(v));
    for (double v : rec.physio) row.push_back(io::format_double(v));
    table.rows.push_back(std::move(row));
  }
  io::write_csv(path, table);
}

FeatureExtremes site_extremes(const SiteDataset& site,
                              const FeatureSchema& schema) {
  const std::size_t width = schema.total();
  FeatureExtremes ex;
  ex.mins.assign(width, std::numeric_limits<double>::infinity());
  ex.maxs.assign(width, -std::numeric_limits<double>::infinity());
  for (const auto& rec : site.records) {
    for (std::size_t j = 0; j < width; ++j) {
      const double v = rec.feature(schema, j);
      ex.mins[j] = std::min(ex.mins[j], v);
      ex.maxs[j] = std::max(ex.maxs[j], v);
    }
  }
  return ex;
}

MinMaxTable reduce_extremes(const std::vector<FeatureExtremes>& all) {
  if (all.empty()) throw StateError("reduce_extremes: no site extremes");
  MinMaxTable table;
  table.mins = all.front().mins;
  table.maxs = all.front().maxs;
  for (std::size_t s = 1; s < all.size(); ++s) {
    for (std::size_t j = 0; j < table.mins.size(); ++j) {
      table.mins[j] = std::min(table.mins[j], all[s].mins[j]);
      table.maxs[j] = std::max(table.maxs[j], all[s].maxs[j]);
    }
  }
  return table;
}

void apply_normalization(SiteDataset& site, const FeatureSchema& schema,
                         const MinMaxTable& table) {
  const std::size_t width = schema.total();
  if (table.mins.size() != width) {
    throw ShapeError("apply_normalization: table width does not match schema");
  }
  for (auto& rec : site.records) {
    for (std::size_t j = 0; j < width; ++j) {
      const double range = table.maxs[j] - table.mins[j];
      double& v = rec.feature(schema, j);
      v = range > 0.0 ? (v - table.mins[j]) / range : 0.0;
    }
  }
}

MinMaxTable normalize_01(std::vector<SiteDataset>& sites,
                         const FeatureSchema& schema) {
  std::vector<FeatureExtremes> all;
  all.reserve(sites.size());
  std::size_t total_records = 0;
  for (const auto& s : sites) {
    total_records += s.records.size();
    all.push_back(site_extremes(s, schema));
  }
  if (total_records == 0) throw StateError("normalize_01: no records");
  const MinMaxTable table = reduce_extremes(all);
  for (auto& s : sites) apply_normalization(s, schema, table);
  return table;
}

void save_minmax_json(const std::string& path, const MinMaxTable& table) {
  nlohmann::json j;
  j["format"] = "fedclust-minmax";
  j["mins"] = table.mins;
  j["maxs"] = table.maxs;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StageError("minmax: cannot write " + path);
  out << j.dump() << "\n";
}

MinMaxTable load_minmax_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StageError("minmax: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("minmax: invalid JSON in " + path + ": " + e.what());
  }
  if (j.value("format", "") != "fedclust-minmax") {
    throw ParseError("minmax: unrecognized container in " + path);
  }
  MinMaxTable t;
  t.mins = j.at("mins").get<std::vector<double>>();
  t.maxs = j.at("maxs").get<std::vector<double>>();
  return t;
}

SplitIndex split(const SiteDataset& site, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("split: ratio must lie in (0,1)");
  }
  const std::size_t n = site.records.size();
  if (n < 2) {
    throw StateError("split: site " + std::to_string(site.site_id) +
                     " has fewer than 2 patients");
  }
  auto n_train = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(n) + 0.5));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  rng::Rng rng(seed);
  const auto perm = rng.permutation(n);
  SplitIndex idx;
  idx.ratio = ratio;
  idx.seed = seed;
  idx.train.assign(perm.begin(), perm.begin() + static_cast<long>(n_train));
  idx.test.assign(perm.begin() + static_cast<long>(n_train), perm.end());
  std::sort(idx.train.begin(), idx.train.end());
  std::sort(idx.test.begin(), idx.test.end());
  return idx;
}

std::vector<double> domain_row(const PatientRecord& rec, int domain) {
  switch (domain) {
    case 0:
      return rec.diagnosis;
    case 1:
      return rec.drugs;
    case 2:
      return rec.physio;
    default:
      throw ShapeError("domain_row: domain index out of range");
  }
}

}  // namespace fedclust::cohort
