#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fedclust::rng {

// All randomness in the library flows through this generator. Standard
// library distributions are implementation-defined, so every distribution is
// implemented here; two runs with the same seeds produce bit-identical
// streams on any platform.

std::uint64_t splitmix64(std::uint64_t& state);

// Named stream derivation: a root seed expands into independent per-stage /
// per-site / per-repetition streams via derive(root, label, a, b). Labels are
// hashed with FNV-1a; the result is mixed through splitmix64.
std::uint64_t derive(std::uint64_t seed, std::string_view label,
                     std::uint64_t a = 0, std::uint64_t b = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, bound).
  std::uint64_t uniform_int(std::uint64_t bound);
  bool bernoulli(double p);
  // Box-Muller; one call consumes two uniforms.
  double normal();
  double normal(double mean, double stddev);
  // Marsaglia-Tsang for shape >= 1, boosted below 1. scale = theta.
  double gamma(double shape, double scale);
  std::vector<double> dirichlet(const std::vector<double>& alpha);
  // Knuth multiplication method; means here are small.
  std::uint64_t poisson(double mean);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::uint32_t> permutation(std::size_t n);

 private:
  std::uint64_t s_[4];
};

}  // namespace fedclust::rng
