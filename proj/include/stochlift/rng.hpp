#pragma once

#include <cstdint>
#include <random>

namespace stochlift {

/// SplitMix64 finalizer. Used to derive independent sub-seeds from a master
/// seed so that per-trajectory streams do not depend on scheduling.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based sub-seed for (master, stream, index).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(master) ^ stream) ^ (index * 0xd1b54a32d192ed03ULL));
}

/// Named streams, so that two consumers of one master seed never share draws.
namespace stream {
inline constexpr std::uint64_t duffing = 0x11;
inline constexpr std::uint64_t medium = 0x12;
inline constexpr std::uint64_t labels = 0x21;
inline constexpr std::uint64_t shuffle = 0x22;
inline constexpr std::uint64_t split = 0x23;
inline constexpr std::uint64_t init = 0x31;
inline constexpr std::uint64_t batches = 0x41;
inline constexpr std::uint64_t rollout = 0x51;
inline constexpr std::uint64_t projections = 0x61;
}  // namespace stream

/// mt19937_64 engine with distribution code spelled out here rather than
/// taken from <random>, whose distributions are implementation-defined.
/// Output is therefore identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open_low() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace stochlift
