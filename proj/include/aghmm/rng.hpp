#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "aghmm/core.hpp"

namespace aghmm {

/// splitmix64 step; used to derive independent stream seeds from a base
/// seed plus a purpose tag, so experiment stages cannot alias.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return splitmix64(splitmix64(base) ^ splitmix64(tag ^ 0x6a09e667f3bcc909ULL));
}

/// Deterministic random source. Draws are generated from mt19937_64 output
/// directly (not std distributions) so sequences are identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; caches the second draw.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Exp(1) draw, bounded away from zero so normalized rows stay positive.
  double exponential() {
    double u = uniform();
    return -std::log1p(-u) + 1e-12;
  }

  /// Index draw from an unnormalized weight vector.
  int categorical(const Vec& w) {
    double total = sum(w);
    double r = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i + 1 < w.size(); ++i) {
      acc += w[i];
      if (r < acc) return int(i);
    }
    return int(w.size()) - 1;
  }

  /// Symmetric Dirichlet(1): uniform over the probability simplex.
  Vec dirichlet1(int n) {
    Vec v(n);
    for (double& x : v) x = exponential();
    normalize(v);
    return v;
  }

  /// Uniform random permutation of 0..n-1 (Fisher-Yates).
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = int(gen_() % std::uint64_t(i + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace aghmm
