#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace gle {

// Philox4x32-10 counter-based generator (Salmon et al. 2011 constants).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

enum class Stream : std::uint32_t { Wiener = 0, Initial = 1, Residual = 2 };

// Standard normals addressed by (seed, path, stream, channel, index). Pairs come from one Box-Muller draw,
// so even/odd indices share a counter; a one-entry cache per channel avoids recomputing the pair.
class NormalSource {
 public:
  NormalSource(std::uint64_t seed, std::uint64_t path)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        path_(static_cast<std::uint32_t>(path)) {}

  static std::array<double, 2> pair_at(std::array<std::uint32_t, 2> key, std::uint32_t path, Stream s,
                                       std::uint32_t channel, std::uint64_t pairIndex) {
    const auto r = philox4x32({static_cast<std::uint32_t>(pairIndex), static_cast<std::uint32_t>(pairIndex >> 32),
                               channel, (path << 2) | static_cast<std::uint32_t>(s)},
                              key);
    constexpr double k53 = 1.0 / 9007199254740992.0;
    const std::uint64_t a = (static_cast<std::uint64_t>(r[0]) << 21) ^ (r[1] >> 11);
    const std::uint64_t b = (static_cast<std::uint64_t>(r[2]) << 21) ^ (r[3] >> 11);
    const double u1 = (static_cast<double>(a & ((1ull << 53) - 1)) + 1.0) * k53;  // (0, 1]
    const double u2 = static_cast<double>(b & ((1ull << 53) - 1)) * k53;
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    return {rad * std::cos(ang), rad * std::sin(ang)};
  }

  double normal(Stream s, std::uint32_t channel, std::uint64_t index) {
    const std::size_t slot = static_cast<std::size_t>(channel) * 3 + static_cast<std::size_t>(s);
    if (slot >= cache_.size()) cache_.resize(slot + 1);
    Entry& e = cache_[slot];
    const std::uint64_t pi = index >> 1;
    if (!e.valid || e.pairIndex != pi) {
      e.values = pair_at(key_, path_, s, channel, pi);
      e.pairIndex = pi;
      e.valid = true;
    }
    return e.values[index & 1];
  }

 private:
  struct Entry {
    bool valid = false;
    std::uint64_t pairIndex = 0;
    std::array<double, 2> values{};
  };
  std::array<std::uint32_t, 2> key_;
  std::uint32_t path_;
  std::vector<Entry> cache_;
};

}  // namespace gle
