#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "osn/tensor.hpp"

namespace osn {

// Seeded generator shared by every stochastic routine. Streams are fully
// determined by the seed; distinct purposes derive their own seeds through
// derive_seed so adding a draw in one place cannot shift another stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double normal() { return normal_(eng_); }
  double uniform() { return uniform_(eng_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  std::size_t uniform_int(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
  }
  std::vector<double> normal_vector(std::size_t n, double stddev = 1.0);
  ad::Tensor normal_tensor(const ad::Shape& shape, double stddev = 1.0);
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// SplitMix64 finalizer over (seed, stream tag).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace osn
