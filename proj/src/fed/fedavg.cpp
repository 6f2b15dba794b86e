#include "fedclust/fed/fedavg.hpp"

#include <algorithm>
#include <cmath>

#include "fedclust/errors.hpp"
#include "fedclust/parallel.hpp"
#include "fedclust/rand/rng.hpp"

namespace fedclust::fed {

void RoundPlan::validate() const {
  // rounds == 0 is tolerated as an explicit no-op run.
  if (local_epochs < 1 || batch_size < 1) {
    throw ConfigError("round plan: local_epochs and batch_size must be >= 1");
  }
}

double AggregationWeights::total() const {
  double t = 0.0;
  for (const auto& [id, n] : counts) t += n;
  return t;
}

double AggregationWeights::weight_of(int site_id) const {
  const double t = total();
  for (const auto& [id, n] : counts) {
    if (id == site_id) return t > 0.0 ? n / t : 0.0;
  }
  return 0.0;
}

std::vector<double> aggregate_weighted(
    std::vector<std::tuple<int, double, std::vector<double>>> entries) {
  if (entries.empty()) throw ProtocolError("aggregate: no site contributions");
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return std::get<0>(a) < std::get<0>(b);
  });
  double total = 0.0;
  for (const auto& [id, n, v] : entries) {
    if (n < 0.0) throw ProtocolError("aggregate: negative sample count");
    total += n;
  }
  if (total <= 0.0) {
    throw ProtocolError("aggregate: all aggregation weights are zero");
  }
  const std::size_t dim = std::get<2>(entries.front()).size();
  std::vector<double> acc(dim, 0.0);
  for (const auto& [id, n, v] : entries) {
    if (v.size() != dim) {
      throw ProtocolError("aggregate: parameter layout mismatch from site " +
                          std::to_string(id));
    }
    if (n == 0.0) continue;
    const double w = n / total;
    for (std::size_t i = 0; i < dim; ++i) acc[i] += w * v[i];
  }
  return acc;
}

std::vector<double> fedavg_round(const std::vector<SiteTrainer>& sites,
                                 const std::vector<double>& global_params,
                                 const RoundPlan& plan,
                                 const AggregationWeights& weights,
                                 std::size_t round_index, Bus* bus, int workers,
                                 double* mean_loss_out,
                                 std::vector<TraceRow>* trace,
                                 const std::string& session) {
  plan.validate();
  if (sites.empty()) throw ProtocolError("fedavg_round: no sites");

  struct Slot {
    bool active = false;
    double n = 0.0;
    LocalFit fit;
  };
  std::vector<Slot> slots(sites.size());

  parallel_for_each(sites.size(), workers, [&](std::size_t i) {
    const SiteTrainer& site = sites[i];
    double n = 0.0;
    for (const auto& [id, c] : weights.counts) {
      if (id == site.site_id) {
        n = c;
        break;
      }
    }
    if (n <= 0.0) return;  // zero-weight sites sit the round out
    slots[i].active = true;
    slots[i].n = n;
    slots[i].fit =
        site.train(global_params, plan.local_epochs, round_index * plan.local_epochs);
  });

  std::vector<std::tuple<int, double, std::vector<double>>> entries;
  double loss_acc = 0.0;
  double n_acc = 0.0;
  std::size_t n_active = 0;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (!slots[i].active) continue;
    ++n_active;
    if (trace != nullptr) {
      trace->push_back({round_index, sites[i].site_id, slots[i].fit.mean_loss,
                        static_cast<std::size_t>(slots[i].n)});
    }
    loss_acc += slots[i].n * slots[i].fit.mean_loss;
    n_acc += slots[i].n;
    if (bus != nullptr) {
      // Parameters travel through the bus: the site transmits, the server
      // receives and aggregates what arrived.
      bus->send({MessageType::kParameters, site_address(sites[i].site_id),
                 server_address(), session, std::move(slots[i].fit.params),
                 "train"});
    } else {
      entries.emplace_back(sites[i].site_id, slots[i].n,
                           std::move(slots[i].fit.params));
    }
  }
  if (bus != nullptr) {
    for (std::size_t j = 0; j < n_active; ++j) {
      auto msg = bus->receive(server_address(), MessageType::kParameters,
                              session);
      const int site_id = std::stoi(msg.from.substr(5));
      double n = 0.0;
      for (const auto& [id, c] : weights.counts) {
        if (id == site_id) {
          n = c;
          break;
        }
      }
      entries.emplace_back(site_id, n,
                           std::move(std::get<std::vector<double>>(msg.payload)));
    }
  }
  if (mean_loss_out != nullptr) {
    *mean_loss_out = n_acc > 0.0 ? loss_acc / n_acc : 0.0;
  }
  auto aggregated = aggregate_weighted(std::move(entries));
  if (bus != nullptr) {
    for (const auto& site : sites) {
      bus->send({MessageType::kGlobalParameters, server_address(),
                 site_address(site.site_id), session, aggregated, "train"});
    }
    for (const auto& site : sites) {
      bus->receive(site_address(site.site_id), MessageType::kGlobalParameters,
                   session);
    }
  }
  return aggregated;
}

FederatedResult run_federated(const std::vector<SiteTrainer>& sites,
                              const std::vector<double>& init_params,
                              const RoundPlan& plan, Bus* bus, int workers,
                              const std::string& session) {
  AggregationWeights weights;
  for (const auto& s : sites) {
    weights.counts.emplace_back(s.site_id, static_cast<double>(s.n_samples));
  }
  FederatedResult result;
  result.params = init_params;
  result.round_losses.reserve(plan.rounds);
  for (std::size_t r = 0; r < plan.rounds; ++r) {
    double loss = 0.0;
    result.params = fedavg_round(sites, result.params, plan, weights, r, bus,
                                 workers, &loss, &result.site_trace, session);
    result.round_losses.push_back(loss);
  }
  return result;
}

FederatedResult centralized_train(const SiteTrainer& pooled,
                                  const std::vector<double>& init_params,
                                  std::size_t epochs, std::size_t batch_size) {
  if (epochs == 0) return {init_params, {}, {}};
  RoundPlan plan{1, epochs, batch_size};
  return run_federated({pooled}, init_params, plan, nullptr, 1);
}

void for_each_batch(
    std::size_t n_examples, std::size_t epochs, std::size_t first_epoch,
    std::size_t batch_size, std::uint64_t shuffle_seed,
    const std::function<void(const std::vector<std::uint32_t>&, std::size_t)>&
        step) {
  for (std::size_t e = 0; e < epochs; ++e) {
    const std::size_t epoch = first_epoch + e;
    rng::Rng rng(rng::derive(shuffle_seed, "epoch", epoch));
    const auto perm = rng.permutation(n_examples);
    for (std::size_t start = 0; start < n_examples; start += batch_size) {
      const std::size_t end = std::min(start + batch_size, n_examples);
      std::vector<std::uint32_t> batch(perm.begin() + static_cast<long>(start),
                                       perm.begin() + static_cast<long>(end));
      step(batch, epoch);
    }
  }
}

}  // namespace fedclust::fed
