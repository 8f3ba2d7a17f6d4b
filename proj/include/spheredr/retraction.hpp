#pragma once
// First half of the sphere retraction: normalize a diffeomorphism at the
// base point.  q_data reads the frame of f there, q_psi builds the flow that
// straightens the chart derivative to the identity, stage_q composes them.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spheredr/diffeo.hpp"
#include "spheredr/quadrature.hpp"
#include "spheredr/smooth.hpp"

namespace spheredr {

inline constexpr double kSobolevC = 2.0;

// Frame of f at the base point and the matrices the flow stage needs.
struct QData {
  Vec3 fx0;        // image of the base point
  Rotation alpha;  // carries (fx0, frame) back to (base point, e1, e2)
  Mat2 frame;      // chart derivative of alpha∘f at 0: [[a,b],[0,c]], a,c > 0
  Mat2 g1;         // frame inverse; the flow drags the derivative onto it
};

namespace detail {

// Small fixed sample for orientation checks; no point near either pole.
inline const std::vector<Vec3>& orientation_probes() {
  static const std::vector<Vec3> pts = [] {
    std::vector<Vec3> v;
    for (int k = 0; k < 8; ++k) {
      const double z = -0.8 + 1.6 * (k + 0.5) / 8.0;
      const double phi = 2.39996322972865332 * k;
      const double r = std::sqrt(1.0 - z * z);
      v.push_back(Vec3{r * std::cos(phi), r * std::sin(phi), z});
    }
    return v;
  }();
  return pts;
}

}  // namespace detail

inline QData q_data(const DiffeoChain& f) {
  if (f.domain() != Domain::sphere)
    throw ValidationError("q_data: expected a sphere chain");
  for (const Vec3& x : detail::orientation_probes()) {
    const auto [fx, J] = f.apply_with_tangent(x);
    if (!(tangent_det(J, x, fx) > 0.0))
      throw ValidationError("q_data: map is not orientation-preserving");
  }
  const auto [fx0, J] = f.apply_with_tangent(kBasePoint);
  const Vec3 u = J * kE1;
  const Vec3 v = J * kE2;
  const GramFrame gf = gram_frame(u, v, fx0);
  const Mat2 frame{gf.a, gf.b, 0.0, gf.c};
  return QData{fx0, frame_alpha(fx0, gf.u1, gf.u2), frame, frame.inverse()};
}

// Planar flow that interpolates the chart derivative from I to g1.  The
// driving field is (g1 - I)·g_s^{-1}·z faded out by the radial cutoff, with
// g_s = (1-s)I + s·g1.  Inside the unit disk the cutoff is exactly 1 and the
// trajectory is the straight segment s -> g_s z0, so points whose endpoints
// both lie in the disk are mapped in closed form; outside radius 2 the field
// vanishes and the map is the identity.  Everything else integrates.
class QFlowMap final : public Primitive {
 public:
  QFlowMap(const Mat2& g1, double t, int steps_per_unit = 256)
      : g1_(g1), t_(t), steps_(steps_per_unit) {
    if (!(t >= 0.0 && t <= 1.0))
      throw ValidationError("frame flow: stage time outside [0,1]");
    if (steps_per_unit < 1)
      throw ValidationError("frame flow: steps per unit must be positive");
    if (!(g1.det() > 0.0))
      throw ValidationError("frame flow: target matrix must have positive det");
    field_.eval = [g1](double s, const Vec2& z) {
      return cutoff_rho(z) * (drift(g1, s) * z);
    };
    field_.jac = [g1](double s, const Vec2& z) {
      const Mat2 m = drift(g1, s);
      return cutoff_rho(z) * m + outer(m * z, cutoff_rho_grad(z));
    };
    field_.support_radius = 2.0;
  }

  Domain domain() const override { return Domain::plane; }
  std::string name() const override { return "frame flow"; }
  double support_radius() const override { return 2.0; }

  Vec2 apply(const Vec2& z) const override {
    if (z.norm() >= 2.0) return z;
    if (in_linear_zone(z)) return gs(t_) * z;
    return flow(field_, z, 0.0, t_, steps_).z;
  }
  Mat2 jacobian(const Vec2& z) const override {
    return apply_with_jacobian(z).second;
  }
  std::pair<Vec2, Mat2> apply_with_jacobian(const Vec2& z) const override {
    if (z.norm() >= 2.0) return {z, Mat2::identity()};
    if (in_linear_zone(z)) return {gs(t_) * z, gs(t_)};
    const FlowResult r = flow(field_, z, 0.0, t_, steps_, true);
    return {r.z, r.J};
  }
  Vec2 invert(const Vec2& w) const override {
    if (w.norm() >= 2.0) return w;
    const Vec2 z0 = gs(t_).inverse() * w;
    if (in_linear_zone(z0)) return z0;
    return flow(field_, w, t_, 0.0, steps_).z;
  }

 private:
  static Mat2 drift(const Mat2& g1, double s) {
    const Mat2 m = (g1 - Mat2::identity());
    return m * (((1.0 - s) * Mat2::identity() + s * g1).inverse());
  }
  Mat2 gs(double s) const {
    return (1.0 - s) * Mat2::identity() + s * g1_;
  }
  // Endpoints in the open unit disk pin the whole segment there, where the
  // cutoff is identically 1 and the flow is the exact linear interpolation.
  bool in_linear_zone(const Vec2& z) const {
    return z.norm() < 1.0 && (g1_ * z).norm() < 1.0;
  }

  Mat2 g1_;
  double t_;
  int steps_;
  TimeField field_;
};

// Flow stage as a sphere primitive: conjugate the planar frame flow through
// the north chart moved by alpha.  Returns nullptr when the stage is a
// no-op (t = 0, or the frame is already orthonormal) so callers can keep
// the chain untouched and exact.
inline PrimitivePtr q_psi(const QData& qd, double t, int steps_per_unit = 256) {
  if (t == 0.0) return nullptr;
  if ((qd.g1 - Mat2::identity()).frobenius() < 1e-14) return nullptr;
  std::vector<PrimitivePtr> inner;
  inner.push_back(std::make_shared<QFlowMap>(qd.g1, t, steps_per_unit));
  return std::make_shared<ChartConjugation>(Chart::north, std::move(inner),
                                            qd.alpha);
}

inline DiffeoChain stage_q(const DiffeoChain& f, const QData& qd, double t,
                           int steps_per_unit = 256) {
  DiffeoChain out = f;
  if (PrimitivePtr p = q_psi(qd, t, steps_per_unit)) out.push_back(std::move(p));
  return out;
}

// alpha(f) ∘ Q_1(f): fixes the base point with identity chart derivative.
inline DiffeoChain normalized_chain(const DiffeoChain& f, const QData& qd,
                                    int steps_per_unit = 256) {
  DiffeoChain out = stage_q(f, qd, 1.0, steps_per_unit);
  if ((qd.alpha.matrix() - Mat3::identity()).max_abs() > 0.0)
    out.push_back(std::make_shared<RotationMap>(qd.alpha));
  return out;
}

// ---------------------------------------------------------------------------
// Patch size: how large a chart ball around the base point can be certified
// for the flattening blend, from Sobolev-3 norms of the height field and of
// a cut-off gauge density.

struct EpsilonReport {
  double sobolev_c;   // embedding constant used
  double sob_height;  // H3 norm square of the height field on the unit disk
  double eps1;        // radius on which the chart map is certified defined
  double sob_gauge;   // H3 norm square of the cut-off gauge density
  double eps;         // radius on which the blend happens
};

namespace detail {

inline const DiskGrid& default_disk_grid() {
  static const DiskGrid grid;
  return grid;
}

// Chart representation of a base-point-fixing map: value and exact Jacobian
// of p ∘ f ∘ p^{-1} through the chain rule.
inline Vec2 chart_map(const DiffeoChain& f, const Vec2& y) {
  return stereo_north(f.apply(stereo_north_inv(y)));
}
inline Mat2 chart_map_jacobian(const DiffeoChain& f, const Vec2& y) {
  const Vec3 x = stereo_north_inv(y);
  const auto [fx, J] = f.apply_with_tangent(x);
  return d_stereo_north(fx) * (J * d_stereo_north_inv(y));
}

// 256 deterministic points covering the closed disk of radius r: sixteen
// rings of sixteen staggered angles.
inline std::vector<Vec2> ring_samples(double r, int rings = 16,
                                      int per_ring = 16) {
  std::vector<Vec2> pts;
  pts.reserve(static_cast<size_t>(rings) * per_ring);
  for (int i = 0; i < rings; ++i) {
    const double rad = r * (i + 1.0) / rings;
    for (int j = 0; j < per_ring; ++j) {
      const double a = 2.0 * kPi * (j + 0.37 * i) / per_ring;
      pts.push_back(Vec2{rad * std::cos(a), rad * std::sin(a)});
    }
  }
  return pts;
}

}  // namespace detail

inline EpsilonReport epsilon(const DiffeoChain& f1, double sobolev_c = kSobolevC,
                             const DiskGrid& grid = detail::default_disk_grid()) {
  if (!(sobolev_c > 0.0))
    throw ValidationError("patch size: Sobolev constant must be positive");
  const auto [y0, J0] = f1.apply_with_tangent(kBasePoint);
  if ((y0 - kBasePoint).norm() > 1e-10)
    throw ValidationError("patch size: map must fix the base point");
  const Mat2 frame0 =
      d_stereo_north(y0) * (J0 * d_stereo_north_inv(Vec2{0.0, 0.0}));
  if ((frame0 - Mat2::identity()).frobenius() > 1e-8)
    throw ValidationError(
        "patch size: map must have identity derivative at the base point");

  EpsilonReport rep;
  rep.sobolev_c = sobolev_c;
  const ScalarField height = [&f1](const Vec2& y) {
    return f1.apply(stereo_north_inv(y)).z;
  };
  rep.sob_height = sobolev3_sq(height, grid);
  const double c = sobolev_c;
  rep.eps1 = (1.0 / c) / std::sqrt(1.0 / (c * c) + rep.sob_height);

  const double eps1 = rep.eps1;
  const ScalarField gauge = [&f1, eps1](const Vec2& y) {
    if (y.norm() >= 0.75 * eps1) return 0.0;
    const Mat2 d = detail::chart_map_jacobian(f1, y) - Mat2::identity();
    const double q = 1.0 / 64.0 + d.frobenius() * d.frobenius();
    return gamma_gauge(eps1, y) * std::sqrt(q);
  };
  try {
    rep.sob_gauge = sobolev3_sq_scaled(gauge, eps1, grid);
  } catch (const Error& e) {
    throw NumericError(
        std::string("patch size: chart map left its domain inside the "
                    "certified ball; the Sobolev constant is too small for "
                    "this input: ") +
        e.what());
  }
  rep.eps = (1.0 / (8.0 * c)) /
            std::sqrt(1.0 / (16.0 * c * c * eps1 * eps1) + rep.sob_gauge);
  if (!(rep.eps > 0.0) || rep.eps > 0.5 * rep.eps1 * (1.0 + 1e-12))
    throw NumericError("patch size: radius left its guaranteed range");

  // Re-verify the two growth guarantees the radius is supposed to certify.
  try {
    for (const Vec2& y : detail::ring_samples(2.0 * rep.eps))
      (void)detail::chart_map(f1, y);
  } catch (const Error& e) {
    throw NumericError(
        std::string("patch size: chart map not defined on twice the "
                    "certified radius: ") +
        e.what());
  }
  for (const Vec2& y : detail::ring_samples(rep.eps)) {
    const Mat2 d = detail::chart_map_jacobian(f1, y) - Mat2::identity();
    if (!(d.op_norm() < 0.25))
      throw NumericError(
          "patch size: chart derivative drifts more than 1/4 inside the "
          "certified ball");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Flattening blend: inside the chart ball of radius eps the map interpolates
// toward the identity, outside it stays f1.  Packaged as a planar blend
// conjugated through the chart: at w = chart(f1(x)) the blend returns
// w + t*gamma*(y - w) with y = chart(x) recovered by chain inversion, which
// is the blend of f1 toward the identity written in image coordinates.

inline DiffeoChain stage_s(const DiffeoChain& f1, double eps, double t) {
  if (!(eps > 0.0) || !(t >= 0.0 && t <= 1.0))
    throw ValidationError("flatten blend: bad radius or stage time");
  if (t == 0.0) return f1;

  // Jacobian of the blended chart map must stay within distance 1 of the
  // identity; sample before building the primitive.
  for (const Vec2& y : detail::ring_samples(eps, 8, 8)) {
    const Vec2 fy = detail::chart_map(f1, y);
    const Mat2 d = detail::chart_map_jacobian(f1, y);
    const double g = gamma_flatten(eps, y);
    const Vec2 gg = gamma_flatten_grad(eps, y);
    const Mat2 ds = d + t * g * (Mat2::identity() - d) + t * outer(y - fy, gg);
    if (!((ds - Mat2::identity()).op_norm() < 1.0))
      throw NumericError(
          "flatten blend: chart Jacobian left the invertibility bound");
  }

  // Capture the base chain by value: the blend owns its preimage lookup.
  const auto shared = std::make_shared<const DiffeoChain>(f1);
  const auto pull = [shared](const Vec2& w) {
    return stereo_north(shared->invert(stereo_north_inv(w)));
  };
  const double e = eps;
  const auto eval = [pull, e, t](const Vec2& w) {
    const Vec2 y = pull(w);
    if (y.norm() >= e) return w;
    return w + t * gamma_flatten(e, y) * (y - w);
  };
  const auto both = [pull, shared, e, t](const Vec2& w) -> std::pair<Vec2, Mat2> {
    const Vec2 y = pull(w);
    if (y.norm() >= e) return {w, Mat2::identity()};
    const double g = gamma_flatten(e, y);
    const Vec2 gg = gamma_flatten_grad(e, y);
    const Mat2 dfbar = detail::chart_map_jacobian(*shared, y);
    const Mat2 b = dfbar.inverse();
    const Mat2 jw = Mat2::identity() + t * g * (b - Mat2::identity()) +
                    t * outer(y - w, b.transpose() * gg);
    return {w + t * g * (y - w), jw};
  };
  const auto jac = [both](const Vec2& w) { return both(w).second; };

  std::vector<PrimitivePtr> inner;
  inner.push_back(std::make_shared<BlendMap>("flatten blend", eval, jac,
                                             1.5 * eps, both));
  DiffeoChain out = f1;
  out.push_back(
      std::make_shared<ChartConjugation>(Chart::north, std::move(inner)));
  return out;
}

}  // namespace spheredr
