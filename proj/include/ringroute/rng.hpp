#pragma once

#include <cstdint>

namespace ringroute {

// Counter-based random source. Every draw is a pure function of
// (seed, replication, node, step, lane), so results never depend on
// how replications are scheduled across workers.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  constexpr std::uint64_t seed() const noexcept { return seed_; }

  constexpr std::uint64_t bits(std::uint64_t replication, std::uint64_t node,
                               std::uint64_t step, std::uint64_t lane) const noexcept {
    std::uint64_t h = mix(seed_ ^ 0x243f6a8885a308d3ULL);
    h = mix(h ^ replication);
    h = mix(h ^ (node * 0x9e3779b97f4a7c15ULL));
    h = mix(h ^ step);
    return mix(h ^ (lane + 0x13198a2e03707344ULL));
  }

  // Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform(std::uint64_t replication, std::uint64_t node,
                           std::uint64_t step, std::uint64_t lane) const noexcept {
    return static_cast<double>(bits(replication, node, step, lane) >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound).
  constexpr std::uint64_t below(std::uint64_t bound, std::uint64_t replication,
                                std::uint64_t node, std::uint64_t step,
                                std::uint64_t lane) const noexcept {
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(bits(replication, node, step, lane)) * bound;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  // splitmix64 finalizer
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
};

// A CounterRng bound to one replication index.
struct RngStream {
  CounterRng rng;
  std::uint64_t replication = 0;

  double uniform(std::uint64_t node, std::uint64_t step, std::uint64_t lane) const noexcept {
    return rng.uniform(replication, node, step, lane);
  }
  std::uint64_t below(std::uint64_t bound, std::uint64_t node, std::uint64_t step,
                      std::uint64_t lane) const noexcept {
    return rng.below(bound, replication, node, step, lane);
  }
};

}  // namespace ringroute
