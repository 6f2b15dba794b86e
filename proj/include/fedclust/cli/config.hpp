#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedclust/cohort/cohort.hpp"
#include "fedclust/fed/fedavg.hpp"
#include "fedclust/predict/predict.hpp"

namespace fedclust::cli {

// Whole-experiment configuration: a strict JSON document (unknown keys are
// rejected with their path). Every run writes the fully resolved form next
// to its outputs.
struct ExperimentConfig {
  std::uint64_t seed = 20240601;
  std::string out_dir = "runs/default";
  int workers = 2;

  cohort::CohortConfig cohort;
  cohort::FeatureSchema schema;
  // Ingest these site CSVs instead of generating a synthetic cohort.
  std::vector<std::string> data_csv;

  std::vector<std::size_t> encoder_widths{128, 64, 16};
  double corruption_rate = 0.3;
  fed::RoundPlan embed_plan{20, 10, 32};
  fed::RoundPlan predict_plan{20, 10, 32};

  std::size_t k_max = 10;
  std::optional<std::size_t> fixed_k;

  std::size_t head_hidden = 32;
  std::size_t classifier_hidden = 16;

  std::vector<predict::Regime> regimes{
      predict::Regime::kSingleSite, predict::Regime::kCentralized,
      predict::Regime::kFedAvg, predict::Regime::kCbfl,
      predict::Regime::kPcbfl};
  std::size_t repetitions = 100;
  double split_ratio = 0.7;
  std::size_t bootstrap_resamples = 1000;

  void validate() const;
};

// "default" loads the built-in configuration; anything else is a JSON path.
ExperimentConfig load_config(const std::string& path_or_default);
void write_resolved_config(const ExperimentConfig& config,
                           const std::string& path);

}  // namespace fedclust::cli
