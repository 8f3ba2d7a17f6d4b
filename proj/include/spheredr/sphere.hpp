#pragma once

#include <cmath>

#include "spheredr/core.hpp"

namespace spheredr {

// Reference point and tangent directions everything is aligned to.
inline const Vec3 kBasePoint{0.0, 0.0, -1.0};
inline const Vec3 kE1{1.0, 0.0, 0.0};
inline const Vec3 kE2{0.0, 1.0, 0.0};

constexpr double kPoleMargin = 1e-12;

inline Vec3 sphere_normalize(const Vec3& x) {
  const double n = x.norm();
  if (n < 1e-8) throw NumericError("point collapsed away from the sphere");
  return x / n;
}

// Projection from the top pole (0,0,1): kBasePoint maps to the origin.
inline Vec2 stereo_north(const Vec3& x) {
  if (x.z >= 1.0 - kPoleMargin)
    throw DomainError("stereo_north: point too close to the excluded pole");
  const double d = 1.0 - x.z;
  return {2.0 * x.x / d, 2.0 * x.y / d};
}

inline Vec3 stereo_north_inv(const Vec2& y) {
  const double s = y.norm2();
  return Vec3{4.0 * y.x, 4.0 * y.y, s - 4.0} / (s + 4.0);
}

// Projection from the bottom pole: excludes kBasePoint itself.
inline Vec2 stereo_south(const Vec3& x) {
  if (x.z <= -1.0 + kPoleMargin)
    throw DomainError("stereo_south: point too close to the excluded pole");
  const double d = 1.0 + x.z;
  return {2.0 * x.x / d, 2.0 * x.y / d};
}

inline Vec3 stereo_south_inv(const Vec2& y) {
  const double s = y.norm2();
  return Vec3{4.0 * y.x, 4.0 * y.y, 4.0 - s} / (s + 4.0);
}

// 2x3 and 3x2 chart differentials, stored by rows.
struct Mat23 {
  Vec3 r0, r1;
  Vec2 operator*(const Vec3& v) const { return {dot(r0, v), dot(r1, v)}; }
};

struct Mat32 {
  Vec2 r0, r1, r2;
  Vec3 operator*(const Vec2& v) const {
    return {dot(r0, v), dot(r1, v), dot(r2, v)};
  }
};

inline Mat2 operator*(const Mat23& a, const Mat32& b) {
  return {a.r0.x * b.r0.x + a.r0.y * b.r1.x + a.r0.z * b.r2.x,
          a.r0.x * b.r0.y + a.r0.y * b.r1.y + a.r0.z * b.r2.y,
          a.r1.x * b.r0.x + a.r1.y * b.r1.x + a.r1.z * b.r2.x,
          a.r1.x * b.r0.y + a.r1.y * b.r1.y + a.r1.z * b.r2.y};
}

inline Mat23 operator*(const Mat23& a, const Mat3& b) {
  return {{dot(a.r0, b.col(0)), dot(a.r0, b.col(1)), dot(a.r0, b.col(2))},
          {dot(a.r1, b.col(0)), dot(a.r1, b.col(1)), dot(a.r1, b.col(2))}};
}

inline Mat32 operator*(const Mat3& a, const Mat32& b) {
  const Vec3 c0{b.r0.x, b.r1.x, b.r2.x}, c1{b.r0.y, b.r1.y, b.r2.y};
  const Vec3 d0 = a * c0, d1 = a * c1;
  return {{d0.x, d1.x}, {d0.y, d1.y}, {d0.z, d1.z}};
}

inline Mat23 d_stereo_north(const Vec3& x) {
  const double d = 1.0 - x.z;
  return {{2.0 / d, 0.0, 2.0 * x.x / (d * d)},
          {0.0, 2.0 / d, 2.0 * x.y / (d * d)}};
}

inline Mat23 d_stereo_south(const Vec3& x) {
  const double d = 1.0 + x.z;
  return {{2.0 / d, 0.0, -2.0 * x.x / (d * d)},
          {0.0, 2.0 / d, -2.0 * x.y / (d * d)}};
}

inline Mat32 d_stereo_north_inv(const Vec2& y) {
  const double s = y.norm2(), D = s + 4.0, D2 = D * D;
  return {{(4.0 * D - 8.0 * y.x * y.x) / D2, -8.0 * y.x * y.y / D2},
          {-8.0 * y.x * y.y / D2, (4.0 * D - 8.0 * y.y * y.y) / D2},
          {16.0 * y.x / D2, 16.0 * y.y / D2}};
}

inline Mat32 d_stereo_south_inv(const Vec2& y) {
  const double s = y.norm2(), D = s + 4.0, D2 = D * D;
  return {{(4.0 * D - 8.0 * y.x * y.x) / D2, -8.0 * y.x * y.y / D2},
          {-8.0 * y.x * y.y / D2, (4.0 * D - 8.0 * y.y * y.y) / D2},
          {-16.0 * y.x / D2, -16.0 * y.y / D2}};
}

// Element of the rotation group; the matrix is validated, not repaired.
class Rotation {
 public:
  explicit Rotation(const Mat3& m) : m_(m) {
    const Mat3 gram = m.transpose() * m;
    if ((gram - Mat3::identity()).max_abs() > 1e-10)
      throw ValidationError("Rotation: matrix is not orthogonal");
    if (std::abs(m.det() - 1.0) > 1e-10)
      throw ValidationError("Rotation: matrix does not preserve orientation");
  }
  static Rotation identity() { return Rotation(Mat3::identity()); }
  static Rotation about(const Vec3& axis, double angle) {
    return Rotation(axis_angle(axis, angle));
  }

  const Mat3& matrix() const { return m_; }
  Rotation inverse() const { return Rotation(m_.transpose()); }
  Vec3 operator*(const Vec3& x) const { return m_ * x; }
  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }

 private:
  Mat3 m_;
};

// Orthonormal tangent pair at x, ordered so the chart orientation is
// positive: (t1 x t2) . x = -1, matching (e1, e2) at the base point.
struct TangentBasis {
  Vec3 t1, t2;
};

inline TangentBasis tangent_basis(const Vec3& x) {
  const Vec3 seed = std::abs(x.x) < 0.9 ? kE1 : kE2;
  const Vec3 t1 = cross(x, seed).normalized();
  return {t1, cross(t1, x)};
}

// Determinant of a sphere map at x with ambient differential J, measured in
// positively-oriented tangent bases at x and at the image point.
inline double tangent_det(const Mat3& J, const Vec3& x, const Vec3& fx) {
  const TangentBasis bx = tangent_basis(x), bf = tangent_basis(fx);
  const Vec3 j1 = J * bx.t1, j2 = J * bx.t2;
  return dot(bf.t1, j1) * dot(bf.t2, j2) - dot(bf.t1, j2) * dot(bf.t2, j1);
}

struct GramFrame {
  Vec3 u1, u2;
  double a, b, c;
};

// Normalized frame data of a tangent pair {u, v} at base: u1 = u/|u|, u2
// completes a positively-oriented pair, and v = b u1 + c u2 with c > 0.
// (The orientation convention is fixed by the worked identity frame at the
// base point: u = e1, v = e2 there must give u2 = e2, so u2 = u1 x base.)
inline GramFrame gram_frame(const Vec3& u, const Vec3& v, const Vec3& base) {
  const double a = u.norm();
  if (a < 1e-12) throw ValidationError("gram_frame: first vector is degenerate");
  const Vec3 u1 = u / a;
  const Vec3 u2 = cross(u1, base).normalized();
  const double b = dot(v, u1);
  const double c = dot(v, u2);
  if (std::abs(c) < 1e-12)
    throw ValidationError("gram_frame: tangent pair is degenerate");
  if (c < 0.0)
    throw ValidationError("gram_frame: tangent pair reverses orientation");
  return {u1, u2, a, b, c};
}

// Rotation sending the orthonormal frame {fx0, u1, u2} to the reference
// frame {base point, e1, e2}.  The input is validated loosely, then
// re-orthonormalized so the result passes the strict Rotation check.
inline Rotation frame_alpha(const Vec3& fx0, const Vec3& u1, const Vec3& u2) {
  const double tol = 1e-8;
  if (std::abs(fx0.norm() - 1.0) > tol || std::abs(u1.norm() - 1.0) > tol ||
      std::abs(u2.norm() - 1.0) > tol || std::abs(dot(fx0, u1)) > tol ||
      std::abs(dot(fx0, u2)) > tol || std::abs(dot(u1, u2)) > tol)
    throw ValidationError("frame_alpha: input frame is not orthonormal");
  // Consistent handedness with the reference triple {base, e1, e2}.
  const double handed = dot(fx0, cross(u1, u2));
  if (std::abs(handed + 1.0) > tol)
    throw ValidationError("frame_alpha: input frame has the wrong orientation");

  const Vec3 c0 = fx0.normalized();
  Vec3 c1 = u1 - dot(u1, c0) * c0;
  c1 = c1.normalized();
  Vec3 c2 = u2 - dot(u2, c0) * c0 - dot(u2, c1) * c1;
  c2 = c2.normalized();

  const Mat3 b1 = Mat3::from_cols(c0, c1, c2);
  const Mat3 b0 = Mat3::from_cols(kBasePoint, kE1, kE2);
  return Rotation(b0 * b1.transpose());
}

}  // namespace spheredr
