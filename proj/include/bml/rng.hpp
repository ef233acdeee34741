#pragma once

#include <cstdint>

namespace bml {

// SplitMix64; used only to expand seeds into generator state.
struct SplitMix64 {
  std::uint64_t state;

  explicit constexpr SplitMix64(std::uint64_t seed) : state(seed) {}

  constexpr std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

// Names one independent random stream. Every draw in the library is a pure
// function of (seed, stream), so identical pairs reproduce identical traces
// byte for byte, on any machine and with any thread count.
struct RngSeed {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

// Stream ids are composed from (replication, role) so that adding
// replications never perturbs the draws of earlier ones. Roles 0..7 are
// reserved; per-user streams start at kUserRole0 + user_index.
inline constexpr int kStreamRoleBits = 24;
inline constexpr std::uint64_t kEnvRole = 0;         // channel availability draws
inline constexpr std::uint64_t kContentionRole = 1;  // backoff draws
inline constexpr std::uint64_t kThetaDrawRole = 2;   // per-block theta from a prior
inline constexpr std::uint64_t kStrategyRole = 3;    // single-user decision rule
inline constexpr std::uint64_t kUserRole0 = 8;

inline constexpr std::uint64_t compose_stream(std::uint64_t replication,
                                              std::uint64_t role) {
  return (replication << kStreamRoleBits) | role;
}

// xoshiro256**: fast, tiny state, period 2^256 - 1.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed, std::uint64_t stream = 0) {
    SplitMix64 a(seed);
    SplitMix64 b(stream ^ 0x632BE59BD9B4E019ULL);
    for (auto& w : s_) w = a.next() ^ b.next();
    // All-zero state is the one forbidden point of the generator.
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[3] = 0x9E3779B97F4A7C15ULL;
  }

  explicit Xoshiro256(RngSeed rs) : Xoshiro256(rs.seed, rs.stream) {}

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Unbiased draw in [0, n); Lemire's multiply-reject method.
  std::uint64_t below(std::uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        m = static_cast<unsigned __int128>(next()) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
};

}  // namespace bml
