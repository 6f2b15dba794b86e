#include "fedclust/cli/config.hpp"

#include <fstream>
#include <set>

#include "fedclust/errors.hpp"
#include "json.hpp"

namespace fedclust::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& path) {
  if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (known.find(key) == known.end()) {
      throw ConfigError("config: unknown key '" + path + key + "'");
    }
  }
}

template <typename T>
void read_into(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + std::string(key) +
                      "': " + e.what());
  }
}

fed::RoundPlan read_plan(const json& j, const std::string& path,
                         fed::RoundPlan defaults) {
  reject_unknown(j, {"rounds", "local_epochs", "batch_size"}, path);
  fed::RoundPlan plan = defaults;
  read_into(j, "rounds", plan.rounds);
  read_into(j, "local_epochs", plan.local_epochs);
  read_into(j, "batch_size", plan.batch_size);
  return plan;
}

}  // namespace

void ExperimentConfig::validate() const {
  cohort.validate();
  schema.validate();
  embed_plan.validate();
  predict_plan.validate();
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (k_max < 1) throw ConfigError("config: clustering.k_max must be >= 1");
  if (fixed_k && (*fixed_k < 1 || *fixed_k > k_max)) {
    throw ConfigError("config: clustering.fixed_k must lie in [1, k_max]");
  }
  if (encoder_widths.size() != 3) {
    throw ConfigError("config: autoencoder.encoder_widths needs 3 entries");
  }
  if ((encoder_widths.back() * 3) % 2 != 0) {
    throw ConfigError("config: total embedding dim must be even for the "
                      "similarity protocol");
  }
  if (!(corruption_rate >= 0.0 && corruption_rate < 1.0)) {
    throw ConfigError("config: autoencoder.corruption_rate must lie in [0,1)");
  }
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
    throw ConfigError("config: split_ratio must lie in (0,1)");
  }
  if (repetitions < 1) throw ConfigError("config: repetitions must be >= 1");
  if (regimes.empty()) throw ConfigError("config: at least one regime required");
  if (out_dir.empty()) throw ConfigError("config: out_dir must be set");
}

ExperimentConfig load_config(const std::string& path_or_default) {
  ExperimentConfig config;
  if (path_or_default == "default") {
    config.validate();
    return config;
  }

  std::ifstream in(path_or_default);
  if (!in) throw ConfigError("config: cannot open " + path_or_default);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path_or_default + ": " +
                      e.what());
  }

  reject_unknown(j,
                 {"seed", "out_dir", "workers", "cohort", "schema", "data_csv",
                  "autoencoder", "embed_plan", "predict_plan", "clustering",
                  "predict", "regimes", "repetitions", "split_ratio",
                  "bootstrap_resamples"},
                 "");
  read_into(j, "seed", config.seed);
  read_into(j, "out_dir", config.out_dir);
  read_into(j, "workers", config.workers);
  read_into(j, "data_csv", config.data_csv);
  read_into(j, "repetitions", config.repetitions);
  read_into(j, "split_ratio", config.split_ratio);
  read_into(j, "bootstrap_resamples", config.bootstrap_resamples);

  if (j.contains("cohort")) {
    const auto& jc = j.at("cohort");
    reject_unknown(jc,
                   {"n_sites", "patients_per_site", "n_planted_groups",
                    "site_group_mixing", "mortality_base_rates"},
                   "cohort.");
    read_into(jc, "n_sites", config.cohort.n_sites);
    read_into(jc, "patients_per_site", config.cohort.patients_per_site);
    read_into(jc, "n_planted_groups", config.cohort.n_planted_groups);
    read_into(jc, "site_group_mixing", config.cohort.site_group_mixing);
    read_into(jc, "mortality_base_rates", config.cohort.mortality_base_rates);
  }
  if (j.contains("schema")) {
    const auto& js = j.at("schema");
    reject_unknown(js, {"n_diagnosis", "n_drugs", "n_physio"}, "schema.");
    read_into(js, "n_diagnosis", config.schema.n_diagnosis);
    read_into(js, "n_drugs", config.schema.n_drugs);
    read_into(js, "n_physio", config.schema.n_physio);
  }
  if (j.contains("autoencoder")) {
    const auto& ja = j.at("autoencoder");
    reject_unknown(ja, {"encoder_widths", "corruption_rate"}, "autoencoder.");
    read_into(ja, "encoder_widths", config.encoder_widths);
    read_into(ja, "corruption_rate", config.corruption_rate);
  }
  if (j.contains("embed_plan")) {
    config.embed_plan = read_plan(j.at("embed_plan"), "embed_plan.",
                                  config.embed_plan);
  }
  if (j.contains("predict_plan")) {
    config.predict_plan = read_plan(j.at("predict_plan"), "predict_plan.",
                                    config.predict_plan);
  }
  if (j.contains("clustering")) {
    const auto& jk = j.at("clustering");
    reject_unknown(jk, {"k_max", "fixed_k"}, "clustering.");
    read_into(jk, "k_max", config.k_max);
    if (jk.contains("fixed_k") && !jk.at("fixed_k").is_null()) {
      config.fixed_k = jk.at("fixed_k").get<std::size_t>();
    }
  }
  if (j.contains("predict")) {
    const auto& jp = j.at("predict");
    reject_unknown(jp, {"head_hidden", "classifier_hidden"}, "predict.");
    read_into(jp, "head_hidden", config.head_hidden);
    read_into(jp, "classifier_hidden", config.classifier_hidden);
  }
  if (j.contains("regimes")) {
    config.regimes.clear();
    for (const auto& name : j.at("regimes")) {
      config.regimes.push_back(predict::parse_regime(name.get<std::string>()));
    }
  }
  config.validate();
  return config;
}

void write_resolved_config(const ExperimentConfig& config,
                           const std::string& path) {
  json j;
  j["seed"] = config.seed;
  j["out_dir"] = config.out_dir;
  j["workers"] = config.workers;
  j["cohort"] = {{"n_sites", config.cohort.n_sites},
                 {"patients_per_site", config.cohort.patients_per_site},
                 {"n_planted_groups", config.cohort.n_planted_groups},
                 {"site_group_mixing", config.cohort.site_group_mixing},
                 {"mortality_base_rates", config.cohort.effective_base_rates()}};
  j["schema"] = {{"n_diagnosis", config.schema.n_diagnosis},
                 {"n_drugs", config.schema.n_drugs},
                 {"n_physio", config.schema.n_physio}};
  j["data_csv"] = config.data_csv;
  j["autoencoder"] = {{"encoder_widths", config.encoder_widths},
                      {"corruption_rate", config.corruption_rate}};
  j["embed_plan"] = {{"rounds", config.embed_plan.rounds},
                     {"local_epochs", config.embed_plan.local_epochs},
                     {"batch_size", config.embed_plan.batch_size}};
  j["predict_plan"] = {{"rounds", config.predict_plan.rounds},
                       {"local_epochs", config.predict_plan.local_epochs},
                       {"batch_size", config.predict_plan.batch_size}};
  j["clustering"] = {{"k_max", config.k_max}};
  if (config.fixed_k) {
    j["clustering"]["fixed_k"] = *config.fixed_k;
  } else {
    j["clustering"]["fixed_k"] = nullptr;
  }
  j["predict"] = {{"head_hidden", config.head_hidden},
                  {"classifier_hidden", config.classifier_hidden}};
  j["regimes"] = nlohmann::json::array();
  for (const auto r : config.regimes) {
    j["regimes"].push_back(predict::regime_name(r));
  }
  j["repetitions"] = config.repetitions;
  j["split_ratio"] = config.split_ratio;
  j["bootstrap_resamples"] = config.bootstrap_resamples;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StageError("config: cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace fedclust::cli
