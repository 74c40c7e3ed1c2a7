#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hvq {

/// Deterministic random source. Distribution transforms are implemented here
/// (not via std:: distributions) so that streams are reproducible bit-for-bit
/// for a given seed regardless of standard-library version.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive, via rejection-free modulo of a
  /// wide draw (bias < 2^-32 for the ranges used here).
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derives an independent child seed from a parent seed and a path of tags
  /// (splitmix64 chain). Used to give every image/epoch/stream its own Rng.
  static uint64_t derive(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t x = seed;
    for (uint64_t tag : path) x = splitmix(x ^ (tag + 0x9e3779b97f4a7c15ULL));
    return x;
  }

  std::string serialize() const;
  void deserialize(const std::string& s);

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hvq
