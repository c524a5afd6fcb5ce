#pragma once

#include <cmath>
#include <cstdint>

namespace fedhp {

/// Deterministic, platform-independent random stream (xoshiro256++ core,
/// splitmix64 seeding). Standard-library distributions are not portable
/// across implementations, so uniform/normal/below are implemented here.
///
/// fork(tag) derives an independent substream without consuming state, so
/// per-client / per-round streams do not depend on scheduling order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : root_(seed) {
    std::uint64_t x = seed;
    for (auto& s : s_) s = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; values come out in generated pairs.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(6.28318530717958647692 * u2);
    have_spare_ = true;
    return r * std::cos(6.28318530717958647692 * u2);
  }

  /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t bound = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return x % n;
  }

  /// Independent substream; does not advance this stream.
  Rng fork(std::uint64_t tag) const {
    std::uint64_t x = root_ ^ (tag + 0x9e3779b97f4a7c15ULL);
    std::uint64_t mixed = splitmix64(x);
    return Rng(mixed ^ splitmix64(x));
  }

  std::uint64_t root_seed() const { return root_; }

 private:
  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t root_;
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace fedhp
