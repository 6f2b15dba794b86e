#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedclust/fed/bus.hpp"

namespace fedclust::fed {

struct RoundPlan {
  std::size_t rounds = 20;
  std::size_t local_epochs = 10;
  std::size_t batch_size = 32;

  void validate() const;
};

// Sample counts backing the n_c / N aggregation weights.
struct AggregationWeights {
  std::vector<std::pair<int, double>> counts;  // (site_id, n_c)

  double total() const;
  double weight_of(int site_id) const;
};

// Sample-size weighted mean of per-site parameter vectors. Entries are
// sorted by site id before accumulation, which makes the result invariant
// to arrival order bit-for-bit. Zero-weight sites are skipped; all-zero
// weights are an error.
std::vector<double> aggregate_weighted(
    std::vector<std::tuple<int, double, std::vector<double>>> entries);

struct LocalFit {
  std::vector<double> params;
  double mean_loss = 0.0;
};

// One site's local training capability. `train` runs `epochs` local epochs
// starting from the given parameters; `first_epoch` is the global epoch
// counter so batch shuffling streams continue seamlessly across rounds.
struct SiteTrainer {
  int site_id = 0;
  std::size_t n_samples = 0;
  std::function<LocalFit(const std::vector<double>& params, std::size_t epochs,
                         std::size_t first_epoch)>
      train;
};

struct TraceRow {
  std::size_t round = 0;
  int site_id = 0;
  double loss = 0.0;
  std::size_t n_samples = 0;
};

struct FederatedResult {
  std::vector<double> params;
  std::vector<double> round_losses;  // sample-weighted mean per round
  std::vector<TraceRow> site_trace;  // per-round per-site training loss
};

// One FedAvg round: broadcast, local training, weighted aggregation.
// Messages are routed through `bus` when provided.
std::vector<double> fedavg_round(const std::vector<SiteTrainer>& sites,
                                 const std::vector<double>& global_params,
                                 const RoundPlan& plan,
                                 const AggregationWeights& weights,
                                 std::size_t round_index, Bus* bus, int workers,
                                 double* mean_loss_out,
                                 std::vector<TraceRow>* trace = nullptr,
                                 const std::string& session = "");

// plan.rounds sequential rounds from init_params, aggregation weights taken
// from the trainers' sample counts.
FederatedResult run_federated(const std::vector<SiteTrainer>& sites,
                              const std::vector<double>& init_params,
                              const RoundPlan& plan, Bus* bus = nullptr,
                              int workers = 1, const std::string& session = "");

// Plain local training on pooled data: one round of `epochs` epochs on a
// single trainer. The gold-standard centralized comparator.
FederatedResult centralized_train(const SiteTrainer& pooled,
                                  const std::vector<double>& init_params,
                                  std::size_t epochs, std::size_t batch_size);

// Shared mini-batch scaffolding: for each epoch, a fresh permutation of
// 0..n_examples-1 is drawn from derive(shuffle_seed, "epoch", epoch) and cut
// into batches; step(indices, epoch) consumes each batch.
void for_each_batch(
    std::size_t n_examples, std::size_t epochs, std::size_t first_epoch,
    std::size_t batch_size, std::uint64_t shuffle_seed,
    const std::function<void(const std::vector<std::uint32_t>&, std::size_t)>&
        step);

}  // namespace fedclust::fed
