#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tsvr {

// xoshiro256** (Blackman & Vigna), state seeded by four SplitMix64 outputs.
// Only integer arithmetic and IEEE basic operations are used for uniform
// draws, so streams are identical on every platform. Normal draws use the
// Marsaglia polar method (std::log, std::sqrt); the second
// variate of each pair is discarded so the state vector alone determines the
// stream.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  static Rng from_state(const State& state);
  const State& state() const { return state_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Unbiased integer in [0, bound), bound > 0.
  std::uint64_t uniform_index(std::uint64_t bound);
  double normal();
  bool coin();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  friend bool operator==(const Rng& a, const Rng& b) = default;

 private:
  State state_{};
};

std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace tsvr
