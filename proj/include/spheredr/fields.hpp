#pragma once

#include "spheredr/diffeo.hpp"
#include "spheredr/smooth.hpp"

namespace spheredr {

// Steady rotational field: amplitude * bump(|z|/radius) * (-z2, z1).
// Vanishes at the origin and outside |z| = radius; analytic Jacobian.
inline TimeField make_rotor_field(double amplitude, double radius) {
  if (!(radius > 0.0)) throw ValidationError("rotor field: radius must be positive");
  TimeField f;
  f.support_radius = radius;
  f.eval = [amplitude, radius](double, const Vec2& z) -> Vec2 {
    const double b = radial_bump(z.norm() / radius);
    return {-amplitude * b * z.y, amplitude * b * z.x};
  };
  f.jac = [amplitude, radius](double, const Vec2& z) -> Mat2 {
    const double r = z.norm();
    const Mat2 rot90{0.0, -1.0, 1.0, 0.0};
    if (r < 1e-14) return amplitude * radial_bump(0.0) * rot90;
    const double u = r / radius;
    const double b = radial_bump(u);
    if (b == 0.0) return Mat2{};
    const double db = b * (-2.0 * u / ((1.0 - u * u) * (1.0 - u * u))) / radius;
    const Vec2 perp{-z.y, z.x};
    const Vec2 dir = z / r;
    return amplitude * (outer(perp, dir) * db + b * rot90);
  };
  return f;
}

// Breathing radial field: amplitude * cos(modulation * t) * bump(|z|/radius) * z.
// Time-dependent; vanishes at the origin and outside |z| = radius.
inline TimeField make_pulse_field(double amplitude, double radius,
                                  double modulation) {
  if (!(radius > 0.0)) throw ValidationError("pulse field: radius must be positive");
  TimeField f;
  f.support_radius = radius;
  f.eval = [amplitude, radius, modulation](double t, const Vec2& z) -> Vec2 {
    const double a = amplitude * std::cos(modulation * t);
    return a * radial_bump(z.norm() / radius) * z;
  };
  f.jac = [amplitude, radius, modulation](double t, const Vec2& z) -> Mat2 {
    const double a = amplitude * std::cos(modulation * t);
    const double r = z.norm();
    if (r < 1e-14) return a * radial_bump(0.0) * Mat2::identity();
    const double u = r / radius;
    const double b = radial_bump(u);
    if (b == 0.0) return Mat2{};
    const double db = b * (-2.0 * u / ((1.0 - u * u) * (1.0 - u * u))) / radius;
    return a * (b * Mat2::identity() + outer(z, z / r) * db);
  };
  return f;
}

}  // namespace spheredr
