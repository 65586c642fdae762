#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "mnp/tensor.hpp"

namespace mnp {

// Deterministic random source.  All sampling goes through explicit
// transforms of mt19937_64 output so that results are reproducible across
// standard libraries; std::*_distribution is implementation-defined and is
// deliberately not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; two uniforms per draw, no caching
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // [0, n); modulo bias is < 2^-52 for any n this library uses
  std::size_t integer(std::size_t n) {
    return static_cast<std::size_t>(gen_() % static_cast<std::uint64_t>(n));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = integer(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  Tensor normal_tensor(std::size_t r, std::size_t c, double stddev = 1.0) {
    Tensor t({r, c});
    for (double& x : t.data()) x = stddev * normal();
    return t;
  }

  // independent substream, a pure function of (construction seed, stream);
  // splitmix64 finalizer decorrelates nearby stream ids
  Rng child(std::uint64_t stream) const {
    std::uint64_t z = seed_ + stream * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace mnp
