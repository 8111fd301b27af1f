#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace obsnet {

// SplitMix64 (Steele, Lea, Flood 2014). The state is a plain counter advanced
// by the golden-ratio increment; every output is the finalizer applied to the
// counter. Any language can reproduce the stream bit-for-bit from the seed.
inline constexpr std::uint64_t splitmix_finalize(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class SeededRng {
 public:
  static constexpr std::uint64_t kIncrement = 0x9E3779B97F4A7C15ULL;

  explicit SeededRng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  // Independent stream for item `index` of a stream family rooted at `seed`.
  static SeededRng derive(std::uint64_t seed, std::uint64_t index) noexcept {
    return SeededRng(splitmix_finalize(seed ^ splitmix_finalize(index + kIncrement)));
  }

  SeededRng derive(std::uint64_t index) const noexcept { return derive(state_, index); }

  std::uint64_t next_u64() noexcept {
    state_ += kIncrement;
    return splitmix_finalize(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] (inclusive). Multiply-shift reduction.
  int uniform_int(int lo, int hi) noexcept {
    const auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo + 1);
    const auto r = static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * span) >> 64);
    return lo + static_cast<int>(r);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Box-Muller, one draw per call (the second variate is discarded so the
  // stream position does not depend on call history).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace obsnet
