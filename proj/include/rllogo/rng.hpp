#pragma once

#include <cstdint>

namespace rllogo {

// Deterministic 64-bit-state generator (splitmix64). The whole project uses
// this instead of <random> engines because its state is a single u64 that
// serializes into checkpoints, and its output is identical on every platform
// (std::uniform_*_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Multiply-shift bounded draw; the tiny modulo bias (< 2^-64 * n) is
    // irrelevant at the sizes used here and keeps the draw branch-free.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  // Independent stream for a named purpose. Mixing the tag through one
  // splitmix round decorrelates streams sharing a master seed.
  static Rng stream(std::uint64_t master, std::uint64_t tag) {
    Rng mix(master ^ (tag * 0xD1B54A32D192ED03ull));
    return Rng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace rllogo
