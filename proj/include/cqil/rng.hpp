#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cqil {

// All randomness in the library goes through this wrapper. std::mt19937_64 is
// bit-exact by the standard; the distributions below are spelled out here
// because the std:: ones are implementation-defined and would break the
// byte-identical-output contract across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Multiply-shift mapping, slight modulo bias is
  // irrelevant at our range sizes but the mapping itself is fixed.
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. One value per call; the spare is kept.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

// Derives an independent substream from a root seed and a set of integer
// tags. Used so that per-record generation does not depend on the order in
// which records are produced.
inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> tags) {
  uint64_t h = detail::splitmix64(root);
  for (uint64_t t : tags) h = detail::splitmix64(h ^ detail::splitmix64(t));
  return h;
}

inline uint64_t derive_seed(uint64_t root, std::string_view tag) {
  return detail::splitmix64(detail::splitmix64(root) ^ detail::fnv1a64(tag));
}

}  // namespace cqil
