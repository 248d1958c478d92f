#pragma once

#include <cstddef>
#include <cstdint>

namespace cissl {

// splitmix64 (Steele, Lea, Flood 2014). The whole generator state is one
// 64-bit word advanced by the golden-ratio increment, so a stream is fully
// determined by its seed and identical on every platform.
//
// Derived draws:
//   uniform()    top 53 bits of next_u64() scaled by 2^-53, in [0, 1)
//   normal()     Box-Muller cosine branch from two uniforms, no cached spare
//   below(n)     rejection sampling on next_u64() to remove modulo bias
//   split(id)    new generator seeded with mix(state + (id + 1) * golden);
//                does not advance the parent
class Rng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  bool bernoulli(double p) noexcept { return uniform() < p; }
  std::size_t below(std::size_t n);

  Rng split(std::uint64_t stream_id) const noexcept;

  std::uint64_t state() const noexcept { return state_; }
  bool operator==(const Rng&) const = default;

 private:
  std::uint64_t state_;
};

}  // namespace cissl
