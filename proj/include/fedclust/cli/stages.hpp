#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "fedclust/cli/config.hpp"
#include "fedclust/fed/bus.hpp"

namespace fedclust::cli {

// One CLI invocation: configuration, output directory, and the in-process
// message bus shared by every stage (the audit log spans a full run).
struct StageContext {
  ExperimentConfig config;
  std::filesystem::path out;
  fed::Bus bus;

  explicit StageContext(ExperimentConfig cfg)
      : config(std::move(cfg)), out(config.out_dir) {}
};

struct StageFlags {
  bool resume = false;
  bool plaintext_oracle = false;
  std::optional<std::size_t> k_override;
};

// Pipeline order: data -> embeddings -> similarity -> clusters -> training ->
// evaluation. Each stage checks its upstream artifacts and throws StageError
// naming the missing file.
void stage_gen_data(StageContext& ctx);
void stage_embed(StageContext& ctx);
void stage_similarity(StageContext& ctx, const StageFlags& flags);
void stage_cluster(StageContext& ctx, const StageFlags& flags);
void stage_train(StageContext& ctx);
void stage_evaluate(StageContext& ctx);
void run_pipeline(StageContext& ctx, const StageFlags& flags);

}  // namespace fedclust::cli
