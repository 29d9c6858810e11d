#include "osn/random.hpp"

namespace osn {

std::vector<double> Rng::normal_vector(std::size_t n, double stddev) {
  std::vector<double> v(n);
  for (auto& x : v) x = stddev * normal();
  return v;
}

ad::Tensor Rng::normal_tensor(const ad::Shape& shape, double stddev) {
  return ad::Tensor::constant(shape, normal_vector(ad::numel_of(shape), stddev));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace osn
