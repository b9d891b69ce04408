#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

namespace vlo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Dense H x W x C grid, row-major with channels fastest.
struct Grid {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int h_, int w_, int c_)
      : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, 0.0) {
    if (h_ < 0 || w_ < 0 || c_ < 0) throw std::invalid_argument("Grid: negative dims");
  }

  size_t idx(int r, int col, int ch) const {
    return (static_cast<size_t>(r) * w + col) * c + ch;
  }
  double& at(int r, int col, int ch) { return v[idx(r, col, ch)]; }
  double at(int r, int col, int ch) const { return v[idx(r, col, ch)]; }
  size_t size() const { return v.size(); }
  bool same_shape(const Grid& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Dense N x C matrix, row-major.
struct RowMatrix {
  int n = 0, c = 0;
  std::vector<double> v;

  RowMatrix() = default;
  RowMatrix(int n_, int c_) : n(n_), c(c_), v(static_cast<size_t>(n_) * c_, 0.0) {
    if (n_ < 0 || c_ < 0) throw std::invalid_argument("RowMatrix: negative dims");
  }

  double* row(int i) { return v.data() + static_cast<size_t>(i) * c; }
  const double* row(int i) const { return v.data() + static_cast<size_t>(i) * c; }
  double& at(int i, int j) { return v[static_cast<size_t>(i) * c + j]; }
  double at(int i, int j) const { return v[static_cast<size_t>(i) * c + j]; }
};

// Deterministic RNG. Draws raw bits from mt19937_64 (whose output sequence is
// fixed by the standard) and maps to doubles locally, so streams do not depend
// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return eng_() % n; }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Runs fn(i) for i in [0, n). Every iteration must write only to its own
// disjoint outputs; then results are identical for any thread count.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

// Process-wide worker count used by parallel_for (1 = sequential).
void set_num_threads(int n);
int num_threads();

}  // namespace vlo
