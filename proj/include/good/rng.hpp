#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace good {

/// SplitMix64 generator. The algorithm is fixed so that synthetic datasets
/// and shuffles are reproducible bit-for-bit on every platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Multiply-shift reduction, n > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; the sine branch is cached for the next call.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Independent stream seed for a named purpose (class means, shuffles, ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 mixer(seed ^ (stream * 0xD1B54A32D192ED03ULL));
  mixer.next();
  return mixer.next();
}

namespace streams {
inline constexpr std::uint64_t kClassMeans = 1;
inline constexpr std::uint64_t kShiftDirection = 2;
inline constexpr std::uint64_t kTrain = 3;
inline constexpr std::uint64_t kTestId = 4;
inline constexpr std::uint64_t kTestOod = 5;
inline constexpr std::uint64_t kGkm = 6;
inline constexpr std::uint64_t kShots = 7;
inline constexpr std::uint64_t kShuffle = 8;
}  // namespace streams

}  // namespace good
