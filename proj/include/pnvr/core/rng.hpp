#pragma once

#include <cstdint>
#include <limits>

namespace pnvr {

// SplitMix64: a tiny counter-style generator. Cheap to seed per ray, so
// every ray's samples depend only on (seed, stream) and never on batching.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : (*this)() % n; }

 private:
  std::uint64_t state_;
};

// Derives an independent stream seed from a base seed and up to three keys.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  SplitMix64 g(seed ^ 0xD1B54A32D192ED03ull);
  std::uint64_t h = g();
  for (std::uint64_t k : {a, b, c}) {
    SplitMix64 m(h ^ (k * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull));
    h = m();
  }
  return h;
}

}  // namespace pnvr
