#include "vlo/geometry.hpp"

#include "vlo/log.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cstdio>
#include <stdexcept>

namespace vlo {

namespace {

void require_finite(const Quaternion& q, const char* who) {
  if (!q.finite()) throw std::invalid_argument(std::string(who) + ": non-finite quaternion");
}

void require_unit(const Quaternion& q, const char* who) {
  require_finite(q, who);
  if (std::abs(q.norm() - 1.0) > 1e-6)
    throw std::invalid_argument(std::string(who) + ": quaternion not unit");
}

}  // namespace

Quaternion normalize(const Quaternion& q) {
  QuatNormCache cache;
  return normalize_cached(q, cache);
}

Quaternion normalize_cached(const Quaternion& raw, QuatNormCache& cache) {
  require_finite(raw, "normalize");
  const double n = raw.norm();
  if (n < 1e-12) {
    log().warn("normalize: near-zero quaternion (norm={}), using identity", n);
    cache.unit = Quaternion::identity();
    cache.inv_norm = 0.0;
    cache.sign = 1.0;
    cache.degenerate = true;
    return cache.unit;
  }
  cache.inv_norm = 1.0 / n;
  Quaternion u{raw.w / n, raw.x / n, raw.y / n, raw.z / n};
  cache.sign = (u.w < 0.0) ? -1.0 : 1.0;
  u = {u.w * cache.sign, u.x * cache.sign, u.y * cache.sign, u.z * cache.sign};
  cache.unit = u;
  cache.degenerate = false;
  return u;
}

Quaternion normalize_backward(const QuatNormCache& cache, const Quaternion& g) {
  if (cache.degenerate) return {0.0, 0.0, 0.0, 0.0};
  // y = s*x/|x|  =>  dx = s*(I - y y^T) g / |x|  (y already includes s).
  const Quaternion& y = cache.unit;
  const double gy = g.w * y.w + g.x * y.x + g.y * y.y + g.z * y.z;
  const double k = cache.sign * cache.inv_norm;
  return {k * (g.w - gy * y.w), k * (g.x - gy * y.x), k * (g.y - gy * y.y),
          k * (g.z - gy * y.z)};
}

Quaternion quat_mul_raw(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

void quat_mul_raw_backward(const Quaternion& a, const Quaternion& b, const Quaternion& g,
                           Quaternion& ga, Quaternion& gb) {
  // Product is bilinear; accumulate both partials directly.
  ga.w += g.w * b.w + g.x * b.x + g.y * b.y + g.z * b.z;
  ga.x += -g.w * b.x + g.x * b.w - g.y * b.z + g.z * b.y;
  ga.y += -g.w * b.y + g.x * b.z + g.y * b.w - g.z * b.x;
  ga.z += -g.w * b.z - g.x * b.y + g.y * b.x + g.z * b.w;

  gb.w += g.w * a.w + g.x * a.x + g.y * a.y + g.z * a.z;
  gb.x += -g.w * a.x + g.x * a.w + g.y * a.z - g.z * a.y;
  gb.y += -g.w * a.y - g.x * a.z + g.y * a.w + g.z * a.x;
  gb.z += -g.w * a.z + g.x * a.y - g.y * a.x + g.z * a.w;
}

Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
  require_unit(a, "quat_multiply");
  require_unit(b, "quat_multiply");
  return normalize(quat_mul_raw(a, b));
}

Vec3 rotate_raw(const Quaternion& q, const Vec3& v) {
  const Vec3 u(q.x, q.y, q.z);
  const Vec3 uv = u.cross(v);
  return v + 2.0 * q.w * uv + 2.0 * u.cross(uv);
}

void rotate_raw_backward(const Quaternion& q, const Vec3& v, const Vec3& g, Quaternion& gq,
                         Vec3& gv) {
  const Vec3 u(q.x, q.y, q.z);
  const Vec3 uv = u.cross(v);
  gq.w += 2.0 * g.dot(uv);
  // d/du of 2w(u x v) + 2(u<u,v> - v<u,u>).
  const Vec3 gu = 2.0 * q.w * v.cross(g) + 2.0 * u.dot(v) * g + 2.0 * u.dot(g) * v -
                  4.0 * v.dot(g) * u;
  gq.x += gu.x();
  gq.y += gu.y();
  gq.z += gu.z();
  // d/dv: I + 2w[u]x + 2([u]x)^2 applied transposed = R(q)^T for unit q.
  gv += g + 2.0 * q.w * g.cross(u) + 2.0 * u.cross(u.cross(g));
}

Vec3 rotate_vector(const Quaternion& q, const Vec3& v) {
  require_unit(q, "rotate_vector");
  if (!v.allFinite()) throw std::invalid_argument("rotate_vector: non-finite vector");
  return rotate_raw(q, v);
}

Mat3 to_rotation_matrix(const Quaternion& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Quaternion from_rotation_matrix(const Mat3& r) {
  // Shepperd's method: pick the dominant diagonal combination.
  Quaternion q;
  const double tr = r.trace();
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (r(2, 1) - r(1, 2)) / s;
    q.y = (r(0, 2) - r(2, 0)) / s;
    q.z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q.w = (r(2, 1) - r(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (r(0, 1) + r(1, 0)) / s;
    q.z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q.w = (r(0, 2) - r(2, 0)) / s;
    q.x = (r(0, 1) + r(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (r(1, 2) + r(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q.w = (r(1, 0) - r(0, 1)) / s;
    q.x = (r(0, 2) + r(2, 0)) / s;
    q.y = (r(1, 2) + r(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return normalize(q);
}

PoseSE3 compose(const PoseSE3& delta, const PoseSE3& prev) {
  const Quaternion dq = normalize(delta.q);
  PoseSE3 out;
  out.q = quat_multiply(dq, prev.q);
  out.t = rotate_raw(dq, prev.t) + delta.t;
  if (!out.t.allFinite()) throw std::invalid_argument("compose: non-finite translation");
  return out;
}

PoseSE3 inverse(const PoseSE3& p) {
  PoseSE3 out;
  out.q = normalize(p.q.conjugate());
  out.t = -rotate_raw(out.q, p.t);
  return out;
}

Mat4 to_matrix(const PoseSE3& p) {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = to_rotation_matrix(p.q);
  m.block<3, 1>(0, 3) = p.t;
  return m;
}

PoseSE3 from_matrix(const Mat4& m) {
  PoseSE3 p;
  p.q = from_rotation_matrix(m.block<3, 3>(0, 0));
  p.t = m.block<3, 1>(0, 3);
  return p;
}

std::vector<Vec3> transform_points(const PoseSE3& pose, const std::vector<Vec3>& pts) {
  require_unit(pose.q, "transform_points");
  std::vector<Vec3> out(pts.size());
  const Mat3 r = to_rotation_matrix(pose.q);
  for (size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].allFinite())
      throw std::invalid_argument("transform_points: non-finite point");
    out[i] = r * pts[i] + pose.t;
  }
  return out;
}

Mat3 nearest_rotation(const Mat3& m, double* correction) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 fix = Mat3::Identity();
    fix(2, 2) = -1.0;
    r = svd.matrixU() * fix * svd.matrixV().transpose();
  }
  if (correction) *correction = (r - m).cwiseAbs().maxCoeff();
  return r;
}

std::string to_kitti_line(const PoseSE3& p) {
  const Mat3 r = to_rotation_matrix(p.q);
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g",
                r(0, 0), r(0, 1), r(0, 2), p.t.x(), r(1, 0), r(1, 1), r(1, 2), p.t.y(),
                r(2, 0), r(2, 1), r(2, 2), p.t.z());
  return std::string(buf);
}

}  // namespace vlo
