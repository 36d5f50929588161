#ifndef MECE_RNG_H_
#define MECE_RNG_H_

#include <cstdint>
#include <random>

namespace mece {

// splitmix64 finalizer, used to derive independent stream seeds
inline uint64_t MixSeed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded random stream. Every consumer owns its own stream so results do not
// depend on call interleaving across components.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), engine_(MixSeed(seed)) {}

  uint64_t seed() const { return seed_; }

  // child stream keyed by (this seed, tag); does not advance this stream
  Rng Derive(uint64_t tag) const { return Rng(MixSeed(seed_ ^ MixSeed(tag))); }

  uint64_t NextU64() { return engine_(); }

  // uniform in [0, 1)
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // uniform integer in [0, n)
  int UniformInt(int n) {
    return static_cast<int>(Uniform() * static_cast<double>(n));
  }

  double Normal() { return normal_(engine_); }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace mece

#endif  // MECE_RNG_H_
