#pragma once

#include "vlo/tensor.hpp"

#include <string>
#include <vector>

namespace vlo {

// Hamilton convention, (w, x, y, z) component order, active rotations.
// normalize() canonicalizes to w >= 0 so q and -q collapse to one
// representative.
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }
  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  bool finite() const {
    return std::isfinite(w) && std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

struct PoseSE3 {
  Quaternion q;
  Vec3 t = Vec3::Zero();

  static PoseSE3 identity() { return {Quaternion::identity(), Vec3::Zero()}; }
};

// Unit norm + w >= 0. A near-zero input (norm < 1e-12) degrades to identity
// with a warning instead of dividing by ~0.
Quaternion normalize(const Quaternion& q);

// Hamilton product, normalized; rotation b followed by a.
Quaternion quat_multiply(const Quaternion& a, const Quaternion& b);

// Rotates v by unit quaternion q.
Vec3 rotate_vector(const Quaternion& q, const Vec3& v);

Mat3 to_rotation_matrix(const Quaternion& q);
Quaternion from_rotation_matrix(const Mat3& r);

// delta applied after prev: q = dq*q_prev, t = R(dq)*t_prev + dt. Equals the
// homogeneous composition T(delta)*T(prev).
PoseSE3 compose(const PoseSE3& delta, const PoseSE3& prev);
PoseSE3 inverse(const PoseSE3& p);

Mat4 to_matrix(const PoseSE3& p);
PoseSE3 from_matrix(const Mat4& m);

std::vector<Vec3> transform_points(const PoseSE3& pose, const std::vector<Vec3>& pts);

// Nearest rotation matrix (polar factor via SVD). Reports the max elementwise
// correction applied when `correction` is non-null.
Mat3 nearest_rotation(const Mat3& m, double* correction = nullptr);

// One pose per line, 12 space-separated values, row-major 3x4 [R|t].
std::string to_kitti_line(const PoseSE3& p);

// ---------------------------------------------------------------------------
// Raw building blocks with adjoints, used by the trainable pose path. The
// `_raw` forms evaluate the algebraic formulas without the unit-norm
// pre-checks so gradients can be chained through normalization explicitly.

Quaternion quat_mul_raw(const Quaternion& a, const Quaternion& b);
void quat_mul_raw_backward(const Quaternion& a, const Quaternion& b, const Quaternion& g,
                           Quaternion& ga, Quaternion& gb);

// v + 2w(u x v) + 2u x (u x v); equals R(q)v for unit q.
Vec3 rotate_raw(const Quaternion& q, const Vec3& v);
void rotate_raw_backward(const Quaternion& q, const Vec3& v, const Vec3& g, Quaternion& gq,
                         Vec3& gv);

struct QuatNormCache {
  Quaternion unit;        // canonical output
  double inv_norm = 1.0;  // 1/|raw|
  double sign = 1.0;      // canonicalization flip
  bool degenerate = false;
};

Quaternion normalize_cached(const Quaternion& raw, QuatNormCache& cache);
// Grad wrt raw input given grad wrt the canonical unit output.
Quaternion normalize_backward(const QuatNormCache& cache, const Quaternion& g);

}  // namespace vlo
