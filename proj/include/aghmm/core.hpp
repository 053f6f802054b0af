#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace aghmm {

using Vec = std::vector<double>;

/// Smallest value a message entry may take; divisions by messages are safe
/// once every entry is floored here.
inline constexpr double kMessageFloor = 1e-300;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Raised when an iterative solver exhausts its pass budget. Carries the
/// last residual so callers can report how far from the fixed point it was.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual, int passes)
      : std::runtime_error(what + " (residual " + std::to_string(residual) +
                           " after " + std::to_string(passes) + " passes)"),
        residual_(residual),
        passes_(passes) {}

  double residual() const { return residual_; }
  int passes() const { return passes_; }

 private:
  double residual_;
  int passes_;
};

/// Dense row-major matrix, sized for the small state spaces used here.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(size_t(r) * c, fill) {}

  double& operator()(int i, int j) { return a[size_t(i) * cols + j]; }
  double operator()(int i, int j) const { return a[size_t(i) * cols + j]; }

  Vec row(int i) const {
    return Vec(a.begin() + size_t(i) * cols, a.begin() + size_t(i + 1) * cols);
  }

  static Mat identity(int n) {
    Mat m(n, n, 0.0);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  Mat transposed() const {
    Mat t(cols, rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }
};

inline double sum(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline double sum(const Mat& m) {
  double s = 0.0;
  for (double x : m.a) s += x;
  return s;
}

/// Scales v to sum 1 and returns the original sum. Zero vectors are left as
/// is (the caller decides what a zero message means).
inline double normalize(Vec& v) {
  double s = sum(v);
  if (s > 0.0)
    for (double& x : v) x /= s;
  return s;
}

inline double normalize(Mat& m) {
  double s = 0.0;
  for (double x : m.a) s += x;
  if (s > 0.0)
    for (double& x : m.a) x /= s;
  return s;
}

/// Floors every entry at kMessageFloor, then normalizes; keeps messages
/// strictly positive so later scaling steps can divide by them.
inline void floor_normalize(Vec& v) {
  for (double& x : v) x = std::max(x, kMessageFloor);
  normalize(v);
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double d = 0.0;
  for (size_t i = 0; i < a.a.size(); ++i) d = std::max(d, std::abs(a.a[i] - b.a[i]));
  return d;
}

/// x * ln(x / y) with the 0 ln 0 = 0 convention used by entropy sums.
inline double xlogx_over(double x, double y) {
  if (x == 0.0) return 0.0;
  return x * std::log(x / y);
}

inline double xlogx(double x) { return x == 0.0 ? 0.0 : x * std::log(x); }

/// Lower-triangular Cholesky factor of a symmetric matrix. Returns false if
/// the matrix is not positive definite; `bad_pivot` then reports the
/// offending diagonal value.
inline bool cholesky(const Mat& m, Mat& lower, double* bad_pivot = nullptr) {
  const int n = m.rows;
  lower = Mat(n, n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = m(i, j);
      for (int k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      if (i == j) {
        if (s <= 0.0) {
          if (bad_pivot) *bad_pivot = s;
          return false;
        }
        lower(i, i) = std::sqrt(s);
      } else {
        lower(i, j) = s / lower(j, j);
      }
    }
  }
  return true;
}

/// FNV-1a over the raw bytes of a double sequence; used for parameter
/// snapshot hashes in learning traces.
class ByteHash {
 public:
  void add(double x) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(&x);
    for (size_t i = 0; i < sizeof(double); ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void add(const Vec& v) {
    for (double x : v) add(x);
  }
  void add(const Mat& m) {
    for (double x : m.a) add(x);
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace aghmm
