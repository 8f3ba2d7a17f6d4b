#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace spheredr {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A point left the domain where an operation is defined (chart pole,
// query outside a map's domain, inverse target out of range).
struct DomainError : Error {
  using Error::Error;
};

// Construction-time or precondition failure: inconsistent parameters,
// a map that is not what the caller claimed it to be.
struct ValidationError : Error {
  using Error::Error;
};

// An iteration failed to do its job: Newton stagnated, a flow diverged,
// a grid could not be refined enough, a feature is below resolution.
struct NumericError : Error {
  using Error::Error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  double norm2() const { return x * x + y * y; }
  double norm() const { return std::sqrt(norm2()); }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }
inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double norm2() const { return x * x + y * y + z * z; }
  double norm() const { return std::sqrt(norm2()); }
  Vec3 normalized() const {
    const double n = norm();
    if (n == 0.0) throw DomainError("cannot normalize zero vector");
    return {x / n, y / n, z / n};
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

// Row-major 2x2 matrix.
struct Mat2 {
  double m[2][2] = {{0.0, 0.0}, {0.0, 0.0}};

  Mat2() = default;
  Mat2(double a, double b, double c, double d) {
    m[0][0] = a;
    m[0][1] = b;
    m[1][0] = c;
    m[1][1] = d;
  }
  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }

  double& operator()(int i, int j) { return m[i][j]; }
  double operator()(int i, int j) const { return m[i][j]; }

  Mat2 operator+(const Mat2& o) const {
    return {m[0][0] + o.m[0][0], m[0][1] + o.m[0][1], m[1][0] + o.m[1][0],
            m[1][1] + o.m[1][1]};
  }
  Mat2 operator-(const Mat2& o) const {
    return {m[0][0] - o.m[0][0], m[0][1] - o.m[0][1], m[1][0] - o.m[1][0],
            m[1][1] - o.m[1][1]};
  }
  Mat2 operator*(double s) const {
    return {m[0][0] * s, m[0][1] * s, m[1][0] * s, m[1][1] * s};
  }
  Mat2 operator*(const Mat2& o) const {
    return {m[0][0] * o.m[0][0] + m[0][1] * o.m[1][0],
            m[0][0] * o.m[0][1] + m[0][1] * o.m[1][1],
            m[1][0] * o.m[0][0] + m[1][1] * o.m[1][0],
            m[1][0] * o.m[0][1] + m[1][1] * o.m[1][1]};
  }
  Vec2 operator*(const Vec2& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y, m[1][0] * v.x + m[1][1] * v.y};
  }
  Mat2 transpose() const { return {m[0][0], m[1][0], m[0][1], m[1][1]}; }
  double det() const { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }
  Mat2 inverse() const {
    const double d = det();
    if (std::abs(d) < 1e-300) throw NumericError("2x2 matrix is singular");
    return {m[1][1] / d, -m[0][1] / d, -m[1][0] / d, m[0][0] / d};
  }
  double frobenius() const {
    return std::sqrt(m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] +
                     m[1][1] * m[1][1]);
  }
  // Spectral norm via the closed form for singular values of a 2x2 matrix.
  double op_norm() const {
    const double a = m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] +
                     m[1][1] * m[1][1];
    const double d = det();
    const double disc = a * a - 4.0 * d * d;
    const double s2 = 0.5 * (a + std::sqrt(disc > 0.0 ? disc : 0.0));
    return std::sqrt(s2 > 0.0 ? s2 : 0.0);
  }
};

inline Mat2 operator*(double s, const Mat2& a) { return a * s; }

// Outer product u v^T.
inline Mat2 outer(const Vec2& u, const Vec2& v) {
  return {u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y};
}

// Row-major 3x3 matrix.
struct Mat3 {
  double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

  Mat3() = default;
  static Mat3 identity() {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
    return r;
  }
  static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    Mat3 r;
    r.m[0][0] = r0.x;
    r.m[0][1] = r0.y;
    r.m[0][2] = r0.z;
    r.m[1][0] = r1.x;
    r.m[1][1] = r1.y;
    r.m[1][2] = r1.z;
    r.m[2][0] = r2.x;
    r.m[2][1] = r2.y;
    r.m[2][2] = r2.z;
    return r;
  }
  static Mat3 from_cols(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    return from_rows({c0.x, c1.x, c2.x}, {c0.y, c1.y, c2.y}, {c0.z, c1.z, c2.z});
  }

  double& operator()(int i, int j) { return m[i][j]; }
  double operator()(int i, int j) const { return m[i][j]; }
  Vec3 row(int i) const { return {m[i][0], m[i][1], m[i][2]}; }
  Vec3 col(int j) const { return {m[0][j], m[1][j], m[2][j]}; }

  Mat3 operator+(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] + o.m[i][j];
    return r;
  }
  Mat3 operator-(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] - o.m[i][j];
    return r;
  }
  Mat3 operator*(double s) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] * s;
    return r;
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
        r.m[i][j] = s;
      }
    return r;
  }
  Vec3 operator*(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }
  Mat3 transpose() const {
    return from_rows(col(0), col(1), col(2));
  }
  double det() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }
  double frobenius() const {
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s += m[i][j] * m[i][j];
    return std::sqrt(s);
  }
  double max_abs() const {
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s = std::max(s, std::abs(m[i][j]));
    return s;
  }
};

inline Mat3 operator*(double s, const Mat3& a) { return a * s; }

// Rotation about a unit axis by angle (Rodrigues form).
inline Mat3 axis_angle(const Vec3& axis, double angle) {
  const Vec3 u = axis.normalized();
  const double c = std::cos(angle), s = std::sin(angle), k = 1.0 - c;
  return Mat3::from_rows({c + u.x * u.x * k, u.x * u.y * k - u.z * s,
                          u.x * u.z * k + u.y * s},
                         {u.y * u.x * k + u.z * s, c + u.y * u.y * k,
                          u.y * u.z * k - u.x * s},
                         {u.z * u.x * k - u.y * s, u.z * u.y * k + u.x * s,
                          c + u.z * u.z * k});
}

}  // namespace spheredr
