#ifndef TFILTER_RNG_HPP
#define TFILTER_RNG_HPP

#include <cstdint>
#include <random>

namespace tfilter {

namespace detail {
/// SplitMix64 finalizer, used to decorrelate derived seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Seeded random stream. Streams derived through split() are statistically
/// independent and depend only on (seed, child id), never on draw position,
/// so parallel work partitioned by stream is reproducible for any thread
/// count. Identical seeds reproduce identical sequences bit-exactly on one
/// platform.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(detail::mix64(detail::mix64(seed) ^ detail::mix64(~stream))),
        engine_(seed_) {}

  /// Independent stream addressed by a child index.
  RngStream split(std::uint64_t child) const {
    return RngStream(seed_, child + 1);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  /// Uniform on [a, b).
  double uniform(double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(engine_);
  }

  /// Standard normal draw.
  double normal() { return normal_(engine_); }

  std::uint64_t seed() const { return seed_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace tfilter

#endif
