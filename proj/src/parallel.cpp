#include "fedclust/parallel.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace fedclust {

namespace {
thread_local bool inside_worker = false;
}

void parallel_for(std::size_t count, int workers,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (count == 0) return;
  const std::size_t n_workers =
      inside_worker ? 1
                    : std::min<std::size_t>(std::max(workers, 1), count);
  if (n_workers <= 1) {
    body(0, count);
    return;
  }

  std::vector<std::thread> threads;
  threads.reserve(n_workers - 1);
  std::vector<std::exception_ptr> errors(n_workers);

  auto run = [&](std::size_t w) {
    inside_worker = true;
    const std::size_t begin = count * w / n_workers;
    const std::size_t end = count * (w + 1) / n_workers;
    try {
      if (begin < end) body(begin, end);
    } catch (...) {
      errors[w] = std::current_exception();
    }
    inside_worker = false;
  };

  for (std::size_t w = 1; w < n_workers; ++w) {
    threads.emplace_back(run, w);
  }
  run(0);
  for (auto& t : threads) t.join();

  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void parallel_for_each(std::size_t count, int workers,
                       const std::function<void(std::size_t)>& body) {
  parallel_for(count, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) body(i);
  });
}

}  // namespace fedclust
