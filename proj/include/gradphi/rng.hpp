#pragma once

// Counter-based random streams. Every draw is a pure function of
// (seed, stream path, counter), so results never depend on how work is
// scheduled across threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace gradphi {

/// Philox4x32-10 (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// A named node in the stream tree rooted at the experiment seed. Children
/// are derived by hashing; leaves draw by counter.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : key_(splitmix64(seed)) {}

  Stream child(std::string_view name) const { return Stream(splitmix64(key_ ^ hash_name(name)), 0); }
  Stream child(std::uint64_t index) const { return Stream(splitmix64(key_ + splitmix64(index + 0x632BE59BD9B4E019ull)), 0); }

  std::uint64_t key() const { return key_; }

  /// Four 32-bit words for the (hi, lo) counter pair.
  Philox4x32::Counter words(std::uint64_t hi, std::uint64_t lo) const {
    return Philox4x32::generate({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(lo >> 32),
                                 static_cast<std::uint32_t>(hi), static_cast<std::uint32_t>(hi >> 32)},
                                {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)});
  }

  /// Two uniforms in (0, 1) with 53-bit resolution.
  std::array<double, 2> uniforms(std::uint64_t hi, std::uint64_t lo) const {
    const auto w = words(hi, lo);
    return {to_unit(w[0], w[1]), to_unit(w[2], w[3])};
  }

  double uniform(std::uint64_t hi, std::uint64_t lo) const { return uniforms(hi, lo)[0]; }

  /// Two independent standard normals (Box-Muller).
  std::array<double, 2> normals(std::uint64_t hi, std::uint64_t lo) const {
    const auto u = uniforms(hi, lo);
    const double rad = std::sqrt(-2.0 * std::log(u[0]));
    const double ang = 2.0 * std::numbers::pi * u[1];
    return {rad * std::cos(ang), rad * std::sin(ang)};
  }

 private:
  Stream(std::uint64_t key, int) : key_(key) {}

  static double to_unit(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(a) << 32) | b) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t key_;
};

/// Fills `out` with standard normals for lattice step `step`: the normal at
/// site i depends only on (stream, step, i).
inline void fill_normals(const Stream& s, std::uint64_t step, double* out, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 1 < n; i += 2) {
    const auto z = s.normals(step, static_cast<std::uint64_t>(i >> 1));
    out[i] = z[0];
    out[i + 1] = z[1];
  }
  if (i < n) out[i] = s.normals(step, static_cast<std::uint64_t>(i >> 1))[0];
}

}  // namespace gradphi
