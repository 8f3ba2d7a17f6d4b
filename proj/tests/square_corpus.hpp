#pragma once

// Hand-built square diffeomorphisms with exact Jacobians: a vertical shear
// and a rotation twist, each driven by a smooth bump supported well inside
// the square, plus their composition.  All fix a collar of width 0.19.

#include <utility>

#include "spheredr/smooth.hpp"
#include "spheredr/square.hpp"

namespace sqcorpus {

using spheredr::Mat2;
using spheredr::SquareClass;
using spheredr::SquareMap;
using spheredr::Vec2;

inline double bump(double u) {
  return spheredr::radial_bump((u - 0.5) / 0.3);
}

inline double bump_d(double u) {
  return spheredr::radial_bump_deriv((u - 0.5) / 0.3) / 0.3;
}

inline SquareMap bump_shear(double amp = 0.1) {
  SquareMap f;
  f.cls = SquareClass::boundary_fixed;
  f.collar = 0.19;
  f.eval = [amp](const Vec2& p) {
    return Vec2{p.x, p.y + amp * bump(p.x) * bump(p.y)};
  };
  f.eval_jac = [amp](const Vec2& p) {
    const double sx = bump(p.x), sy = bump(p.y);
    return std::make_pair(
        Vec2{p.x, p.y + amp * sx * sy},
        Mat2{1.0, 0.0, amp * bump_d(p.x) * sy, 1.0 + amp * sx * bump_d(p.y)});
  };
  return f;
}

inline SquareMap bump_twist(double amp = 0.9) {
  const Vec2 c{0.5, 0.5};
  auto angle = [amp](double r) { return amp * spheredr::radial_bump(r / 0.3); };
  auto angle_d = [amp](double r) {
    return amp * spheredr::radial_bump_deriv(r / 0.3) / 0.3;
  };
  SquareMap f;
  f.cls = SquareClass::boundary_fixed;
  f.collar = 0.19;
  f.eval = [c, angle](const Vec2& p) {
    const Vec2 u = p - c;
    const double r = u.norm();
    if (r >= 0.3) return p;
    const double a = angle(r);
    const double ca = std::cos(a), sa = std::sin(a);
    return c + Vec2{ca * u.x - sa * u.y, sa * u.x + ca * u.y};
  };
  f.eval_jac = [c, angle, angle_d](const Vec2& p) {
    const Vec2 u = p - c;
    const double r = u.norm();
    if (r >= 0.3)
      return std::make_pair(p, Mat2{1.0, 0.0, 0.0, 1.0});
    const double a = angle(r);
    const double ca = std::cos(a), sa = std::sin(a);
    const Vec2 v = c + Vec2{ca * u.x - sa * u.y, sa * u.x + ca * u.y};
    Mat2 jac{ca, -sa, sa, ca};
    if (r > 1e-12) {
      const Vec2 ru = u * (angle_d(r) / r);
      const Vec2 rv{-sa * u.x - ca * u.y, ca * u.x - sa * u.y};
      jac = jac + spheredr::outer(rv, ru);
    }
    return std::make_pair(v, jac);
  };
  f.inv = [c, angle](const Vec2& w) {
    const Vec2 u = w - c;
    const double r = u.norm();  // the twist preserves radius
    if (r >= 0.3) return w;
    const double a = -angle(r);
    const double ca = std::cos(a), sa = std::sin(a);
    return c + Vec2{ca * u.x - sa * u.y, sa * u.x + ca * u.y};
  };
  return f;
}

inline SquareMap compose_squares(const SquareMap& outer_map,
                                 const SquareMap& inner_map) {
  SquareMap f;
  f.cls = SquareClass::boundary_fixed;
  f.collar = std::min(outer_map.collar, inner_map.collar);
  f.eval = [outer_map, inner_map](const Vec2& p) {
    return outer_map.eval(inner_map.eval(p));
  };
  f.eval_jac = [outer_map, inner_map](const Vec2& p) {
    const auto [mid, ji] = inner_map.eval_jac(p);
    const auto [val, jo] = outer_map.eval_jac(mid);
    return std::make_pair(val, jo * ji);
  };
  f.inv = [outer_map, inner_map](const Vec2& w) {
    return spheredr::square_invert(inner_map,
                                   spheredr::square_invert(outer_map, w));
  };
  return f;
}

inline SquareMap bump_composed() {
  return compose_squares(bump_shear(), bump_twist());
}

}  // namespace sqcorpus
