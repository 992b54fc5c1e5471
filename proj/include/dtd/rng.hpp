#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "dtd/tensor.hpp"

namespace dtd {

// Deterministic, splittable pseudorandom source (xoshiro256** seeded via
// splitmix64). Children derived by name or index are independent of how many
// draws the parent has made, so module-level streams can be handed out freely
// without perturbing each other.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    Rng split(std::string_view name) const;
    Rng split(std::uint64_t index) const;

    std::uint64_t next_u64();
    double uniform();                 // [0, 1)
    double uniform(double lo, double hi);
    int uniform_int(int n);           // [0, n)
    double normal();                  // standard normal, Box-Muller
    double normal(double mean, double stddev);

    Tensor normal_tensor(std::vector<int> shape, double stddev = 1.0);
    Tensor uniform_tensor(std::vector<int> shape, double lo, double hi);

    // Fisher-Yates over [0, n) index vector.
    std::vector<std::size_t> permutation(std::size_t n);

    std::uint64_t stream_seed() const { return stream_seed_; }

  private:
    std::uint64_t stream_seed_ = 0;
    std::uint64_t state_[4] = {0, 0, 0, 0};
};

}  // namespace dtd
