#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fedclust/cli/config.hpp"
#include "fedclust/cli/stages.hpp"
#include "fedclust/errors.hpp"
#include "json.hpp"

using namespace fedclust;
using namespace fedclust::cli;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig config;
  config.seed = 4242;
  config.out_dir = out;
  config.workers = 1;
  config.cohort.n_sites = 3;
  config.cohort.patients_per_site = 40;
  config.schema = {.n_diagnosis = 12, .n_drugs = 20, .n_physio = 6};
  config.encoder_widths = {16, 8, 4};
  config.embed_plan = {2, 2, 32};
  config.predict_plan = {2, 2, 32};
  config.k_max = 4;
  config.head_hidden = 8;
  config.classifier_hidden = 6;
  config.repetitions = 2;
  config.bootstrap_resamples = 50;
  return config;
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// All regular files below a directory, as relative-path -> content.
std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    out[fs::relative(entry.path(), root).string()] = read_file(entry.path());
  }
  return out;
}

}  // namespace

TEST_CASE("config loader rejects unknown keys with their path") {
  const auto dir = temp_dir("fedclust_cli_cfg");
  const auto path = (dir / "bad.json").string();
  {
    std::ofstream out(path);
    out << R"({"cohort": {"n_sites": 4, "typo_key": 1}})";
  }
  try {
    load_config(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("cohort.typo_key") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("default config is valid and matches the documented defaults") {
  const auto config = load_config("default");
  CHECK(config.cohort.n_sites == 20);
  CHECK(config.cohort.patients_per_site == 250);
  CHECK(config.schema.n_diagnosis == 483);
  CHECK(config.schema.n_drugs == 1056);
  CHECK(config.schema.n_physio == 10);
  CHECK(config.embed_plan.rounds == 20);
  CHECK(config.embed_plan.local_epochs == 10);
  CHECK(config.predict_plan.batch_size == 32);
  CHECK(config.k_max == 10);
  CHECK(config.repetitions == 100);
  CHECK(config.encoder_widths == std::vector<std::size_t>{128, 64, 16});
}

TEST_CASE("config validation catches bad values") {
  auto c = tiny_config("x");
  c.split_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config("x");
  c.encoder_widths = {16, 8, 3};  // 3*3 = 9-dim embedding is odd
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config("x");
  c.workers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("resolved config round-trips through the loader") {
  const auto dir = temp_dir("fedclust_cli_round");
  auto config = tiny_config((dir / "run").string());
  write_resolved_config(config, (dir / "resolved.json").string());
  const auto back = load_config((dir / "resolved.json").string());
  CHECK(back.seed == config.seed);
  CHECK(back.cohort.n_sites == config.cohort.n_sites);
  CHECK(back.encoder_widths == config.encoder_widths);
  CHECK(back.repetitions == config.repetitions);
  CHECK(back.regimes == config.regimes);
  fs::remove_all(dir);
}

TEST_CASE("pipeline produces every artifact and a hashed manifest") {
  const auto dir = temp_dir("fedclust_cli_pipe");
  StageContext ctx(tiny_config(dir.string()));
  StageFlags flags;
  flags.plaintext_oracle = true;
  run_pipeline(ctx, flags);

  for (const char* artifact :
       {"resolved_config.json", "manifest.json", "minmax.json",
        "similarity.bin", "registry.json", "similarity_oracle.bin",
        "smpc_check.json", "similarity_scatter.csv", "wcss_curve.csv",
        "chosen_k.json", "assignments.csv", "cluster_stats.json",
        "cbfl_assignments.csv", "summary.csv", "per_site.csv",
        "best_counts.csv", "comparison.csv", "ae_trace.csv",
        "models/ae_diagnosis.bin", "models/ae_drug.bin", "models/ae_physio.bin",
        "data/site_000.csv", "embeddings/site_000.csv",
        "predictions/predictions_rep0000.csv"}) {
    CHECK_MESSAGE(fs::exists(dir / artifact), artifact);
  }

  nlohmann::json manifest;
  std::ifstream in(dir / "manifest.json");
  in >> manifest;
  for (const char* stage : {"gen-data", "embed", "similarity", "cluster",
                            "train", "evaluate"}) {
    REQUIRE(manifest["stages"].contains(stage));
    for (const auto& [file, hash] : manifest["stages"][stage].items()) {
      CHECK(hash.get<std::string>().rfind("fnv1a:", 0) == 0);
    }
  }

  // The full-run bus audit: sites emit exactly parameter vectors, feature
  // extremes, SMPC shares/partials, mean embeddings (cbfl regime), and
  // metrics. No raw-record message type exists at all.
  const auto types = ctx.bus.types_from_sites();
  const std::set<fed::MessageType> expected{
      fed::MessageType::kParameters,    fed::MessageType::kFeatureExtremes,
      fed::MessageType::kSmpcShareA1,   fed::MessageType::kSmpcShareB2,
      fed::MessageType::kSmpcPartialVa, fed::MessageType::kSmpcPartialVb,
      fed::MessageType::kSiteMeanEmbedding, fed::MessageType::kMetrics};
  CHECK(types == expected);

  // No parameter message in any evaluation-phase record.
  for (const auto& r : ctx.bus.records_in_phase("eval")) {
    CHECK(r.type != fed::MessageType::kParameters);
    CHECK(r.type != fed::MessageType::kGlobalParameters);
  }
  CHECK(ctx.bus.pending() == 0);
  fs::remove_all(dir);
}

TEST_CASE("pcbfl-only pipeline emits exactly the contract message set") {
  const auto dir = temp_dir("fedclust_cli_audit");
  auto config = tiny_config(dir.string());
  config.regimes = {predict::Regime::kPcbfl};
  StageContext ctx(std::move(config));
  run_pipeline(ctx, {});
  const std::set<fed::MessageType> expected{
      fed::MessageType::kParameters,    fed::MessageType::kFeatureExtremes,
      fed::MessageType::kSmpcShareA1,   fed::MessageType::kSmpcShareB2,
      fed::MessageType::kSmpcPartialVa, fed::MessageType::kSmpcPartialVb,
      fed::MessageType::kMetrics};
  CHECK(ctx.bus.types_from_sites() == expected);
  fs::remove_all(dir);
}

TEST_CASE("two pipeline runs with one config are bit-identical at any workers") {
  const auto dir_a = temp_dir("fedclust_cli_rep_a");
  const auto dir_b = temp_dir("fedclust_cli_rep_b");

  auto config_a = tiny_config(dir_a.string());
  StageContext ctx_a(config_a);
  run_pipeline(ctx_a, {});

  auto config_b = tiny_config(dir_b.string());
  config_b.workers = 3;
  StageContext ctx_b(std::move(config_b));
  run_pipeline(ctx_b, {});

  const auto tree_a = snapshot_tree(dir_a);
  const auto tree_b = snapshot_tree(dir_b);
  REQUIRE(tree_a.size() == tree_b.size());
  for (const auto& [file, content] : tree_a) {
    REQUIRE(tree_b.count(file) == 1);
    // out_dir and workers legitimately differ inside the resolved config and
    // its manifest hash; every data-bearing artifact must match bit-exactly.
    if (file == "resolved_config.json" || file == "manifest.json") continue;
    CHECK_MESSAGE(tree_b.at(file) == content, file);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("resume skips completed stages") {
  const auto dir = temp_dir("fedclust_cli_resume");
  StageContext ctx(tiny_config(dir.string()));
  run_pipeline(ctx, {});
  const auto before = read_file(dir / "summary.csv");
  const auto t_before = fs::last_write_time(dir / "similarity.bin");

  StageContext ctx2(tiny_config(dir.string()));
  StageFlags flags;
  flags.resume = true;
  run_pipeline(ctx2, flags);
  CHECK(fs::last_write_time(dir / "similarity.bin") == t_before);
  CHECK(read_file(dir / "summary.csv") == before);
  fs::remove_all(dir);
}

TEST_CASE("stages fail with a stage error when upstream artifacts are missing") {
  const auto dir = temp_dir("fedclust_cli_missing");
  StageContext ctx(tiny_config(dir.string()));
  CHECK_THROWS_AS(stage_similarity(ctx, {}), StageError);
  CHECK_THROWS_AS(stage_train(ctx), StageError);
  CHECK_THROWS_AS(stage_evaluate(ctx), StageError);
  fs::remove_all(dir);
}

TEST_CASE("cluster stage honors a fixed k override") {
  const auto dir = temp_dir("fedclust_cli_fixedk");
  StageContext ctx(tiny_config(dir.string()));
  stage_gen_data(ctx);
  stage_embed(ctx);
  stage_similarity(ctx, {});
  StageFlags flags;
  flags.k_override = 3;
  stage_cluster(ctx, flags);

  nlohmann::json j;
  std::ifstream in(dir / "chosen_k.json");
  in >> j;
  CHECK(j["k"] == 3);
  CHECK(j["method"].get<std::string>().find("fixed") != std::string::npos);
  fs::remove_all(dir);
}

#ifdef FEDCLUST_BIN
TEST_CASE("binary exit codes match the contract") {
  const std::string bin = FEDCLUST_BIN;
  const auto dir = temp_dir("fedclust_cli_exit");

  auto run_cmd = [&](const std::string& args) {
    const std::string cmd = bin + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  // config error -> 2
  {
    std::ofstream bad(dir / "bad.json");
    bad << R"({"nonsense": true})";
  }
  CHECK(run_cmd("gen-data --config " + (dir / "bad.json").string()) == 2);

  // stage-dependency error -> 3
  CHECK(run_cmd("train --config default --out " + (dir / "empty").string()) ==
        3);

  // success -> 0
  {
    std::ofstream ok(dir / "ok.json");
    ok << R"({"seed": 1, "out_dir": ")" << (dir / "run").string() << R"(",
      "cohort": {"n_sites": 2, "patients_per_site": 10},
      "schema": {"n_diagnosis": 4, "n_drugs": 4, "n_physio": 2}})";
  }
  CHECK(run_cmd("gen-data --config " + (dir / "ok.json").string()) == 0);
  fs::remove_all(dir);
}
#endif
