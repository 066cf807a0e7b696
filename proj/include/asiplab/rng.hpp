#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace asiplab {

/// SplitMix64 finalizer. A bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

/// Per-replica stream identity derived from a master seed.
struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;
};

/// Derives the stream for one replica:
///
///     stream_id = mix64(mix64(master) + (replica_id + 1) * 0x9e3779b97f4a7c15)
///
/// For a fixed master the map replica_id -> stream_id is injective over all
/// 64-bit replica ids (odd multiplier, bijective finalizer), and it does not
/// depend on any other replica.
constexpr SeedSpec seed_stream(std::uint64_t master, std::uint64_t replica_id) noexcept {
  return {master, mix64(mix64(master) + (replica_id + 1) * kGoldenGamma)};
}

/// 64-bit Mersenne Twister seeded from a stream. The engine's output
/// sequence is fixed by the C++ standard; all variates below are built from
/// raw engine words so that results do not depend on the standard library's
/// distribution implementations.
class Rng {
public:
  explicit Rng(SeedSpec s) : engine_(s.stream_id) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_pos() { return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>(engine_()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(engine_()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal by the Box-Muller transform (one variate cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
    const double a = 2.0 * M_PI * uniform();
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace asiplab
