#pragma once

#include <cstdint>
#include <vector>

namespace tagv {

// Counter-based splitmix64 walk. Integer state and integer->double conversion
// only, so streams are bit-identical across platforms and build flags. Every
// consumer derives its own stream from (seed, purpose, index) instead of
// sharing one generator; that keeps draw order independent of scheduling.
class RngState {
 public:
  explicit RngState(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(v[i], v[j]);
    }
  }

  // splitmix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Order-sensitive fold of two ids into one stream id.
  static std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
    return mix(a + kGolden * (b + 1));
  }

  static RngState derive(std::uint64_t seed, std::uint64_t stream) {
    return RngState(mix(seed) ^ combine(stream, 0x5EEDull));
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  std::uint64_t state_;
};

}  // namespace tagv
