#pragma once

// Philox4x32-10 counter-based generator. A draw is a pure function of
// (key, counter), so streams can be split by coordinates instead of by
// sequential state.

#include <array>
#include <cstdint>

namespace aoi {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

  static constexpr Key key_from_seed(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57;
  static constexpr std::uint32_t kW0 = 0x9E3779B9;
  static constexpr std::uint32_t kW1 = 0xBB67AE85;
};

/// Uniform on the open interval (0, 1) from the first 52 bits of a block:
/// (k + ½)/2⁵², so the extremes 2⁻⁵³ and 1 − 2⁻⁵³ are exact.
inline double uniform_open(const Philox4x32::Counter& out) {
  const std::uint64_t bits = ((std::uint64_t{out[0]} << 32) | out[1]) >> 12;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

/// Uniform draw addressed by (seed, c0, c1, c2, c3).
inline double uniform_at(std::uint64_t seed, std::uint32_t c0, std::uint32_t c1, std::uint32_t c2, std::uint32_t c3) {
  return uniform_open(Philox4x32::block({c0, c1, c2, c3}, Philox4x32::key_from_seed(seed)));
}

}  // namespace aoi
