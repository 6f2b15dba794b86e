#include <cstdio>
#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "fedclust/cli/config.hpp"
#include "fedclust/cli/stages.hpp"
#include "fedclust/errors.hpp"
#include "fedclust/kernels/kernels.hpp"

namespace {

using namespace fedclust;

// Exit codes: 0 success, 2 config error, 3 stage-dependency error,
// 4 numeric/protocol error.
int run(int argc, char** argv) {
  CLI::App app{"Clustered federated learning simulator with privacy-preserving "
               "patient similarity"};
  app.require_subcommand(1);

  std::string config_path = "default";
  std::string out_override;
  int workers_override = 0;
  std::uint64_t seed_override = 0;
  bool has_seed_override = false;

  app.add_option("--config", config_path,
                 "experiment config JSON, or 'default'");
  app.add_option("--out", out_override, "override the output directory");
  app.add_option("--workers", workers_override, "override the worker count");
  app.add_option("--seed", seed_override, "override the root seed")
      ->each([&](const std::string&) { has_seed_override = true; });

  cli::StageFlags flags;
  auto* gen = app.add_subcommand("gen-data", "generate or ingest the cohort");
  auto* emb = app.add_subcommand("embed",
                                 "federated denoising autoencoders + embeddings");
  auto* sim = app.add_subcommand("similarity",
                                 "secure patient similarity matrix");
  sim->add_flag("--plaintext-oracle", flags.plaintext_oracle,
                "also compute the centralized plaintext reference and RMSE");
  auto* clu = app.add_subcommand("cluster", "spectral clustering + elbow");
  std::size_t k_flag = 0;
  clu->add_option("--k", k_flag, "bypass the elbow and fix the cluster count");
  auto* tra = app.add_subcommand("train", "train all configured regimes");
  auto* eva = app.add_subcommand("evaluate", "metric tables from prediction dumps");
  auto* pipe = app.add_subcommand("pipeline", "run every stage in order");
  pipe->add_flag("--resume", flags.resume, "skip stages with existing outputs");
  pipe->add_flag("--plaintext-oracle", flags.plaintext_oracle,
                 "verify the similarity stage against the plaintext oracle");
  pipe->add_option("--k", k_flag, "fix the cluster count");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();
  CLI11_PARSE(app, argc, argv);
  if (k_flag > 0) flags.k_override = k_flag;

  cli::ExperimentConfig config = cli::load_config(config_path);
  if (const char* env = std::getenv("FEDCLUST_OUT_DIR")) config.out_dir = env;
  if (const char* env = std::getenv("FEDCLUST_WORKERS")) {
    config.workers = std::max(1, std::atoi(env));
  }
  if (!out_override.empty()) config.out_dir = out_override;
  if (workers_override > 0) config.workers = workers_override;
  if (has_seed_override) config.seed = seed_override;
  config.validate();

  std::filesystem::create_directories(config.out_dir);
  cli::StageContext ctx(std::move(config));
  std::printf("fedclust: backend=%s workers=%d out=%s\n",
              kern::active_backend(), ctx.config.workers,
              ctx.out.string().c_str());

  if (gen->parsed()) cli::stage_gen_data(ctx);
  if (emb->parsed()) cli::stage_embed(ctx);
  if (sim->parsed()) cli::stage_similarity(ctx, flags);
  if (clu->parsed()) cli::stage_cluster(ctx, flags);
  if (tra->parsed()) cli::stage_train(ctx);
  if (eva->parsed()) cli::stage_evaluate(ctx);
  if (pipe->parsed()) cli::run_pipeline(ctx, flags);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const StageError& e) {
    std::fprintf(stderr, "stage error: %s\n", e.what());
    return 3;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
