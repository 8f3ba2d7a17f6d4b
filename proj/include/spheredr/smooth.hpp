#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "spheredr/core.hpp"
#include "spheredr/gauss.hpp"

namespace spheredr {

// C-infinity ramp: 0 for x <= 0, 1 for x >= 1, strictly increasing between.
// Built from e^{-1/x}; the maximum slope is exactly 2 (attained at x = 1/2).
inline double ramp(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / x);
  const double b = std::exp(-1.0 / (1.0 - x));
  return a / (a + b);
}

inline double ramp_deriv(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  const double a = std::exp(-1.0 / x);
  const double b = std::exp(-1.0 / (1.0 - x));
  const double ix = 1.0 / x, iy = 1.0 / (1.0 - x);
  const double s = a + b;
  return a * b * (ix * ix + iy * iy) / (s * s);
}

// Integral of ramp over [0, z] for z in [0, 1].  Uses the symmetry
// ramp(1-x) = 1 - ramp(x) to keep the quadrature panel on [0, 1/2].
inline double ramp_integral(double z) {
  if (z <= 0.0) return 0.0;
  if (z >= 1.0) return 0.5;
  if (z > 0.5) return z - 0.5 + ramp_integral(1.0 - z);
  return gauss_integrate([](double u) { return ramp(u); }, 0.0, z, 64);
}

// Normalized step on [0, 1] whose derivative ramps up over [0, q], holds a
// flat top on [q, 1-q], and ramps down over [1-q, 1].  Slope bound 1/(1-q).
inline double step01_value(double q, double xi) {
  if (xi <= 0.0) return 0.0;
  if (xi >= 1.0) return 1.0;
  double raw;
  if (xi <= q)
    raw = q * ramp_integral(xi / q);
  else if (xi < 1.0 - q)
    raw = xi - 0.5 * q;
  else
    raw = (1.0 - q) - q * ramp_integral((1.0 - xi) / q);
  return raw / (1.0 - q);
}

inline double step01_deriv(double q, double xi) {
  if (xi <= 0.0 || xi >= 1.0) return 0.0;
  double psi;
  if (xi <= q)
    psi = ramp(xi / q);
  else if (xi < 1.0 - q)
    psi = 1.0;
  else
    psi = ramp((1.0 - xi) / q);
  return psi / (1.0 - q);
}

// Monotone step from 0 at lo to 1 at hi whose value is exactly constant on a
// plateau_fraction-sized margin at each end of [lo, hi].  The derivative is a
// flat-topped bump over the middle stretch; its peak stays below
// 1.05 / ((1 - 2m) (hi - lo)).
class SmoothStep {
 public:
  SmoothStep(double lo, double hi, double plateau_fraction)
      : lo_(lo), hi_(hi), m_(plateau_fraction) {
    if (!(hi > lo)) throw ValidationError("SmoothStep: hi must exceed lo");
    if (!(plateau_fraction > 0.0 && plateau_fraction < 0.5))
      throw ValidationError("SmoothStep: plateau fraction must be in (0, 1/2)");
    w_ = hi - lo;
  }

  double value(double u) const {
    const double tau = (u - lo_) / w_;
    if (tau <= m_) return 0.0;
    if (tau >= 1.0 - m_) return 1.0;
    return step01_value(kInnerRamp, (tau - m_) / (1.0 - 2.0 * m_));
  }

  double derivative(double u) const {
    const double tau = (u - lo_) / w_;
    if (tau <= m_ || tau >= 1.0 - m_) return 0.0;
    const double xi = (tau - m_) / (1.0 - 2.0 * m_);
    return step01_deriv(kInnerRamp, xi) / ((1.0 - 2.0 * m_) * w_);
  }

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double plateau_fraction() const { return m_; }

  static constexpr double kInnerRamp = 0.04;

 private:
  double lo_, hi_, m_, w_;
};

// Time legs of the retraction: the first runs on [0, 1/2], the second on
// [1/2, 1], each with 20% plateaus so composition boundaries are exactly flat.
inline const SmoothStep& clock_first() {
  static const SmoothStep s(0.0, 0.5, 0.2);
  return s;
}
inline const SmoothStep& clock_second() {
  static const SmoothStep s(0.5, 1.0, 0.2);
  return s;
}

// Which leg of the retraction a time parameter falls in, plus the local
// clock value for that leg.  t = 1/2 reports (second, 0); the first leg's
// clock is already parked at 1 there, so the two agree.
enum class ClockStage { first, second };

inline std::pair<ClockStage, double> clock_pair(double t) {
  if (t < 0.0 || t > 1.0)
    throw ValidationError("clock_pair: time must lie in [0, 1]");
  if (t < 0.5) return {ClockStage::first, clock_first().value(t)};
  return {ClockStage::second, clock_second().value(t)};
}

// Radial cutoff on the plane: 1 on |y| <= 1, 0 on |y| >= 2, a function of
// |y|^2 so it is smooth through the origin.  Deliberately a single gentle
// ramp rather than a plateau profile: its higher derivatives stay small,
// which keeps flow fields built from it easy to integrate accurately.
inline double cutoff_rho(const Vec2& y) {
  return 1.0 - ramp((y.norm2() - 1.0) / 3.0);
}

inline Vec2 cutoff_rho_grad(const Vec2& y) {
  const double d = -ramp_deriv((y.norm2() - 1.0) / 3.0) / 3.0;
  return {2.0 * d * y.x, 2.0 * d * y.y};
}

// Radial window used around the centered fixed point when measuring the
// gauge field: 1 on |y| <= eps1/2, 0 on |y| >= 3 eps1/4.  Plain gentle ramp
// for the same reason as cutoff_rho (it enters a Sobolev integrand).
inline double gamma_gauge(double eps1, const Vec2& y) {
  const double u = y.norm() / eps1;
  if (u <= 0.5) return 1.0;
  if (u >= 0.75) return 0.0;
  return 1.0 - ramp((u - 0.5) * 4.0);
}

// Radial blend used by the flattening stage: 1 on |y| <= eps/2, 0 on
// |y| >= eps.  Flat-topped derivative with ramp fraction 0.3, so the slope
// never exceeds (1/0.7) * (2/eps) < 3/eps; that bound is what keeps the
// blended map's Jacobian within distance < 1 of the identity.
inline double gamma_flatten(double eps, const Vec2& y) {
  const double u = y.norm() / eps;
  if (u <= 0.5) return 1.0;
  if (u >= 1.0) return 0.0;
  return 1.0 - step01_value(0.3, 2.0 * u - 1.0);
}

inline Vec2 gamma_flatten_grad(double eps, const Vec2& y) {
  const double n = y.norm();
  const double u = n / eps;
  if (u <= 0.5 || u >= 1.0 || n == 0.0) return {0.0, 0.0};
  const double d = -step01_deriv(0.3, 2.0 * u - 1.0) * 2.0 / eps;
  return {d * y.x / n, d * y.y / n};
}

// Dead-zone half-width for the axial rescaling: smooth in r, at most 0.05,
// and always below r/3 so the rescaling keeps positive slope.
inline double chi_margin(double r) {
  return 0.05 * r / std::sqrt(r * r + 0.04);
}

namespace detail {

// Bump of unit height with support [delta, 1 - delta] and ramp width delta;
// integrates to 1 - 3 delta.
inline double chi_bump(double delta, double x) {
  if (x <= delta || x >= 1.0 - delta) return 0.0;
  if (x < 2.0 * delta) return ramp((x - delta) / delta);
  if (x > 1.0 - 2.0 * delta) return ramp((1.0 - delta - x) / delta);
  return 1.0;
}

inline double chi_bump_integral(double delta, double x) {
  if (x <= delta) return 0.0;
  if (x >= 1.0 - delta) return 1.0 - 3.0 * delta;
  if (x < 2.0 * delta) return delta * ramp_integral((x - delta) / delta);
  if (x > 1.0 - 2.0 * delta)
    return (1.0 - 3.0 * delta) - delta * ramp_integral((1.0 - delta - x) / delta);
  return x - 1.5 * delta;
}

}  // namespace detail

// Monotone reparametrization of [0, 1] with chi(0, r) = 0, chi(1, r) = r,
// slope exactly 1 near both endpoints (within chi_margin(r)), and
// chi(x, 1) = x identically.  Extended linearly with unit slope outside
// [0, 1]; smooth everywhere.
inline double chi(double x, double r) {
  if (!(r > 0.0)) throw ValidationError("chi: scale r must be positive");
  const double delta = chi_margin(r);
  const double cm1 = (r - 1.0) / (1.0 - 3.0 * delta);
  return x + cm1 * detail::chi_bump_integral(delta, x);
}

inline double chi_dx(double x, double r) {
  if (!(r > 0.0)) throw ValidationError("chi: scale r must be positive");
  const double delta = chi_margin(r);
  const double cm1 = (r - 1.0) / (1.0 - 3.0 * delta);
  return 1.0 + cm1 * detail::chi_bump(delta, x);
}

// Inverse of chi(., r): bisection to a tight bracket, then Newton polish.
inline double chi_inverse(double s, double r) {
  if (!(r > 0.0)) throw ValidationError("chi: scale r must be positive");
  const double slack = 1e-12 * std::max(1.0, r);
  if (s < -slack || s > r + slack)
    throw DomainError("chi_inverse: target outside [0, r]");
  double lo = s - std::max(0.0, r - 1.0) - 1e-9;
  double hi = s + std::max(0.0, 1.0 - r) + 1e-9;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chi(mid, r) < s)
      lo = mid;
    else
      hi = mid;
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 4; ++it) {
    const double d = chi_dx(x, r);
    if (d <= 1e-12) break;
    x -= (chi(x, r) - s) / d;
  }
  return x;
}

// Blend weight used when correcting the square map near the exit edge:
// 1 on [0, 0.2], 0 on [0.8, 1].
inline double boundary_blend(double x) {
  static const SmoothStep s(0.0, 1.0, 0.2);
  return 1.0 - s.value(x);
}

inline double boundary_blend_deriv(double x) {
  static const SmoothStep s(0.0, 1.0, 0.2);
  return -s.derivative(x);
}

// Cheap C-infinity bump: 1 at u = 0, support (-1, 1), one exp per call.
// Used by the synthetic flow fields in the test corpus and the CLI.
inline double radial_bump(double u) {
  const double u2 = u * u;
  if (u2 >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - u2));
}

inline double radial_bump_deriv(double u) {
  const double u2 = u * u;
  if (u2 >= 1.0) return 0.0;
  const double den = 1.0 - u2;
  return radial_bump(u) * (-2.0 * u / (den * den));
}

}  // namespace spheredr
