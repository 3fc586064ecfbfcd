#pragma once

#include <cmath>
#include <cstdint>

namespace ff {

// splitmix64; used to expand one user seed into independent stream seeds.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xorshift128+ seeded via splitmix64. Documented deterministic PRNG: all
// randomness in the project flows through this generator.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    s0_ = splitmix64(sm);
    s1_ = splitmix64(sm);
    if (s0_ == 0 && s1_ == 0) s1_ = 0x9e3779b97f4a7c15ULL;
  }

  uint64_t next_u64() {
    uint64_t x = s0_;
    const uint64_t y = s1_;
    s0_ = y;
    x ^= x << 23;
    s1_ = x ^ y ^ (x >> 17) ^ (y >> 26);
    return s1_ + y;
  }

  // Uniform in [0, 1) using the top 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Uniform integer in [lo, hi] inclusive.
  int64_t range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Box-Muller; consumes two uniforms per pair, caches the second.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t s0_ = 0;
  uint64_t s1_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Deterministic sub-stream derivation: hash the parent seed with a few
// domain tags so independent consumers never share a stream.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag_a, uint64_t tag_b = 0,
                            uint64_t tag_c = 0) {
  uint64_t s = seed;
  uint64_t h = splitmix64(s);
  s ^= tag_a * 0x9e3779b97f4a7c15ULL;
  h ^= splitmix64(s);
  s ^= tag_b * 0xc2b2ae3d27d4eb4fULL;
  h ^= splitmix64(s);
  s ^= tag_c * 0x165667b19e3779f9ULL;
  h ^= splitmix64(s);
  return h;
}

// FNV-1a over raw bytes; used for golden-file hashes of frozen tensors.
inline uint64_t fnv1a64(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ff
