#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace sae::rng {

/// Substream lanes. Every consumer of randomness owns a lane so that
/// parallel replicates never share generator state.
enum Lane : std::uint64_t {
  kLaneLocations = 0x01,
  kLaneField = 0x02,
  kLaneRanef = 0x03,
  kLaneNoise = 0x04,
  kLaneFolds = 0x05,
  kLaneScenario = 0x06,
  kLaneDiagnostics = 0x07,
  kLanePairSubsample = 0x08,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a master seed with a key path (lane, replicate index, ...) into a
/// single substream seed. Pure function of its arguments, so replicate b
/// gets the same stream no matter which thread runs it.
inline std::uint64_t derive(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t s = splitmix64(master ^ 0x5851f42d4c957f2dULL);
  for (std::uint64_t k : keys) s = splitmix64(s ^ splitmix64(k + 0x9e3779b97f4a7c15ULL));
  return s;
}

/// Deterministic random stream. mt19937_64 output is pinned by the standard
/// and doubles are built from raw bits, so sequences are identical across
/// platforms and thread counts.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : gen_(seed) {}
  Stream(std::uint64_t master, std::initializer_list<std::uint64_t> keys)
      : gen_(derive(master, keys)) {}

  std::uint64_t bits() { return gen_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1); never returns 0, safe for log().
  double uniform_open() {
    return (static_cast<double>(bits() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller on explicit uniforms (portable, no
  /// reliance on std::normal_distribution internals).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    // Rejection to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = bits();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sae::rng
