#pragma once

#include <cmath>
#include <cstdint>

#include "facetalk/common.hpp"

namespace facetalk {

// Counter-based random stream: every draw is a pure function of
// (key, counter), so streams keyed by (seed, step) or (seed, timestep)
// reproduce bitwise regardless of thread count or call site.
class CounterRng {
 public:
  explicit CounterRng(uint64_t key) : key_(key) {}

  static uint64_t mix(uint64_t a, uint64_t b) { return hash(a, b ^ kStream); }

  static uint64_t hash(uint64_t key, uint64_t ctr) {
    uint64_t z = key + 0x9e3779b97f4a7c15ull * (ctr + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() { return hash(key_, counter_++); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // [0, n), unbiased to ~n/2^64
  uint64_t uniform_index(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller (cosine branch). Consumes two counters per draw.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * M_PI * u2);
  }

  template <typename S>
  void fill_normal(MatX<S>& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j)
        m(i, j) = static_cast<S>(normal());
  }

  template <typename S>
  MatX<S> normal_matrix(Index rows, Index cols) {
    MatX<S> m(rows, cols);
    fill_normal(m);
    return m;
  }

  uint64_t counter() const { return counter_; }

 private:
  static constexpr uint64_t kStream = 0xd2b74407b1ce6e93ull;
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace facetalk
