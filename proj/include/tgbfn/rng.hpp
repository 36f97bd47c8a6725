#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace tgbfn {

// splitmix64 finalizer; used to derive substream seeds.
constexpr uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic random stream with order-independent substream derivation.
//
// derive() hashes the stream's identity seed with the given keys, so a child
// stream depends only on (seed, keys), never on how much the parent has been
// consumed. Samplers and training loops key substreams by (tag, step, lane)
// to stay reproducible under any evaluation order or thread count.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(mix64(seed)) {}

  Rng derive(uint64_t k0, uint64_t k1 = 0, uint64_t k2 = 0, uint64_t k3 = 0) const {
    uint64_t s = seed_;
    s = mix64(s ^ mix64(k0 + 0x1ULL));
    s = mix64(s ^ mix64(k1 + 0x2ULL));
    s = mix64(s ^ mix64(k2 + 0x3ULL));
    s = mix64(s ^ mix64(k3 + 0x4ULL));
    return Rng(s);
  }

  uint64_t next() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes exactly two uniforms per draw.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
  }

  // Index in [0, probs.size()) drawn from the given probability row.
  int categorical(std::span<const double> probs) {
    if (probs.empty()) throw std::invalid_argument("categorical: empty probability row");
    const double u = uniform();
    double acc = 0.0;
    int last_positive = -1;
    for (size_t k = 0; k < probs.size(); ++k) {
      if (probs[k] > 0.0) last_positive = static_cast<int>(k);
      acc += probs[k];
      if (u < acc) return static_cast<int>(k);
    }
    // Row sums can fall a few ulps short of 1; fall back to the last
    // positive-mass class.
    if (last_positive < 0) throw std::invalid_argument("categorical: all-zero probability row");
    return last_positive;
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace tgbfn
