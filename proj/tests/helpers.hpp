#pragma once

#include "stochlift/parallel.hpp"
#include "stochlift/types.hpp"


#include <algorithm>
#include <cstdint>
#include <cstring>
#include <random>

namespace testing {

using stochlift::Matrix;
using stochlift::Vector;

// Generator for property tests; independent of the library RNG.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal() { return std::normal_distribution<double>()(eng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
  Matrix matrix(long rows, long cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) m(i, j) = scale * normal();
    return m;
  }
  Vector vector(long n, double scale = 1.0) {
    Vector v(n);
    for (long i = 0; i < n; ++i) v(i) = scale * normal();
    return v;
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

// Restores the default thread count on scope exit.
struct ThreadScope {
  explicit ThreadScope(int threads) { stochlift::set_num_threads(threads); }
  ~ThreadScope() { stochlift::set_num_threads(0); }
};

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
           return std::memcmp(&x, &y, sizeof(double)) == 0;
         });
}

inline bool bitwise_equal(const stochlift::TrajectorySet& a, const stochlift::TrajectorySet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a.trajectories[i].states, b.trajectories[i].states)) return false;
  }
  return true;
}

}  // namespace testing
