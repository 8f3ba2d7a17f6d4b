#pragma once

#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "spheredr/core.hpp"
#include "spheredr/sphere.hpp"

namespace spheredr {

enum class Domain { sphere, plane };
enum class Chart { north, south };

inline Vec2 chart_forward(Chart c, const Vec3& x) {
  return c == Chart::north ? stereo_north(x) : stereo_south(x);
}
inline Vec3 chart_backward(Chart c, const Vec2& y) {
  return c == Chart::north ? stereo_north_inv(y) : stereo_south_inv(y);
}
inline Mat23 chart_diff(Chart c, const Vec3& x) {
  return c == Chart::north ? d_stereo_north(x) : d_stereo_south(x);
}
inline Mat32 chart_inv_diff(Chart c, const Vec2& y) {
  return c == Chart::north ? d_stereo_north_inv(y) : d_stereo_south_inv(y);
}
inline Vec3 chart_pole(Chart c) {
  return c == Chart::north ? Vec3{0.0, 0.0, 1.0} : Vec3{0.0, 0.0, -1.0};
}

// Ambient differential of chart_inv . planar . chart, evaluated with the
// planar Jacobian j at chart coordinates, images already known.
inline Mat3 ambient_from_chart(const Mat32& dinv, const Mat2& j,
                               const Mat23& dfwd) {
  Mat32 a;  // dinv * j
  a.r0 = {dinv.r0.x * j(0, 0) + dinv.r0.y * j(1, 0),
          dinv.r0.x * j(0, 1) + dinv.r0.y * j(1, 1)};
  a.r1 = {dinv.r1.x * j(0, 0) + dinv.r1.y * j(1, 0),
          dinv.r1.x * j(0, 1) + dinv.r1.y * j(1, 1)};
  a.r2 = {dinv.r2.x * j(0, 0) + dinv.r2.y * j(1, 0),
          dinv.r2.x * j(0, 1) + dinv.r2.y * j(1, 1)};
  Mat3 out;
  const Vec2 rows[3] = {a.r0, a.r1, a.r2};
  for (int i = 0; i < 3; ++i) {
    out(i, 0) = rows[i].x * dfwd.r0.x + rows[i].y * dfwd.r1.x;
    out(i, 1) = rows[i].x * dfwd.r0.y + rows[i].y * dfwd.r1.y;
    out(i, 2) = rows[i].x * dfwd.r0.z + rows[i].y * dfwd.r1.z;
  }
  return out;
}

class Primitive;
using PrimitivePtr = std::shared_ptr<const Primitive>;

// One closed-form building block.  Sphere primitives implement the Vec3
// interface, planar ones the Vec2 interface; the unused side throws.
class Primitive {
 public:
  virtual ~Primitive() = default;
  virtual Domain domain() const = 0;
  virtual std::string name() const = 0;
  // Radius outside which a planar primitive acts as the identity;
  // infinity when no such radius exists.
  virtual double support_radius() const {
    return std::numeric_limits<double>::infinity();
  }

  virtual Vec3 apply(const Vec3&) const { throw wrong_domain(); }
  virtual Mat3 tangent(const Vec3&) const { throw wrong_domain(); }
  virtual Vec3 invert(const Vec3&) const { throw wrong_domain(); }
  virtual std::pair<Vec3, Mat3> apply_with_tangent(const Vec3& x) const {
    return {apply(x), tangent(x)};
  }

  virtual Vec2 apply(const Vec2&) const { throw wrong_domain(); }
  virtual Mat2 jacobian(const Vec2&) const { throw wrong_domain(); }
  virtual Vec2 invert(const Vec2&) const { throw wrong_domain(); }
  virtual std::pair<Vec2, Mat2> apply_with_jacobian(const Vec2& z) const {
    return {apply(z), jacobian(z)};
  }

 private:
  ValidationError wrong_domain() const {
    return ValidationError(name() + ": operation not defined on this domain");
  }
};

class RotationMap : public Primitive {
 public:
  explicit RotationMap(Rotation r) : r_(std::move(r)) {}
  Domain domain() const override { return Domain::sphere; }
  std::string name() const override { return "rotation"; }
  Vec3 apply(const Vec3& x) const override { return sphere_normalize(r_ * x); }
  Mat3 tangent(const Vec3&) const override { return r_.matrix(); }
  Vec3 invert(const Vec3& x) const override {
    return sphere_normalize(r_.matrix().transpose() * x);
  }
  const Rotation& rotation() const { return r_; }

 private:
  Rotation r_;
};

class ScalingMap : public Primitive {
 public:
  explicit ScalingMap(double factor) : s_(factor) {
    if (!(factor > 0.0))
      throw ValidationError("scaling: factor must be positive");
  }
  Domain domain() const override { return Domain::plane; }
  std::string name() const override { return "scaling"; }
  Vec2 apply(const Vec2& z) const override { return z * s_; }
  Mat2 jacobian(const Vec2&) const override {
    return {s_, 0.0, 0.0, s_};
  }
  Vec2 invert(const Vec2& z) const override { return z / s_; }

 private:
  double s_;
};

// Moebius transformation w -> (aw+b)/(cw+d) in the half-coordinate w = y/2
// of the top-pole chart, extended to the whole sphere.  On the upper
// hemisphere it is evaluated through the other chart, where the conjugated
// coefficients are (conj d, conj c; conj b, conj a).
class MobiusMap : public Primitive {
 public:
  using cplx = std::complex<double>;
  MobiusMap(cplx a, cplx b, cplx c, cplx d) : a_(a), b_(b), c_(c), d_(d) {
    if (std::abs(a * d - b * c) < 1e-12)
      throw ValidationError("mobius: coefficients are singular (ad - bc = 0)");
  }

  Domain domain() const override { return Domain::sphere; }
  std::string name() const override { return "mobius"; }

  Vec3 apply(const Vec3& x) const override { return eval(x, a_, b_, c_, d_); }
  Vec3 invert(const Vec3& x) const override { return eval(x, d_, -b_, -c_, a_); }

  Mat3 tangent(const Vec3& x) const override {
    if (x.z <= 0.0) {
      const Vec2 y = stereo_north(x);
      const cplx w(0.5 * y.x, 0.5 * y.y);
      const cplx den = c_ * w + d_;
      if (std::norm(den) < 1e-280)
        throw NumericError("mobius: derivative at a chart pole");
      const cplx dw = (a_ * d_ - b_ * c_) / (den * den);
      const Vec2 yi = to_plane(m(w, a_, b_, c_, d_));
      return ambient_from_chart(d_stereo_north_inv(yi), cmat(dw),
                                d_stereo_north(x));
    }
    const cplx as = std::conj(d_), bs = std::conj(c_);
    const cplx cs = std::conj(b_), ds = std::conj(a_);
    const Vec2 y = stereo_south(x);
    const cplx u(0.5 * y.x, 0.5 * y.y);
    const cplx den = cs * u + ds;
    if (std::norm(den) < 1e-280)
      throw NumericError("mobius: derivative at a chart pole");
    const cplx du = (as * ds - bs * cs) / (den * den);
    const Vec2 yi = to_plane(m(u, as, bs, cs, ds));
    return ambient_from_chart(d_stereo_south_inv(yi), cmat(du),
                              d_stereo_south(x));
  }

 private:
  static cplx m(cplx w, cplx a, cplx b, cplx c, cplx d) {
    return (a * w + b) / (c * w + d);
  }
  static Vec2 to_plane(cplx w) { return {2.0 * w.real(), 2.0 * w.imag()}; }
  static Mat2 cmat(cplx dw) {
    return {dw.real(), -dw.imag(), dw.imag(), dw.real()};
  }

  static Vec3 eval(const Vec3& x, cplx a, cplx b, cplx c, cplx d) {
    if (x.z <= 0.0) {
      const Vec2 y = stereo_north(x);
      const cplx w(0.5 * y.x, 0.5 * y.y);
      const cplx den = c * w + d;
      if (std::norm(den) < 1e-280) return {0.0, 0.0, 1.0};
      const cplx im = m(w, a, b, c, d);
      if (std::abs(im) > 1e100) return {0.0, 0.0, 1.0};
      return stereo_north_inv(to_plane(im));
    }
    // Conjugated action in the bottom-pole chart.
    const cplx as = std::conj(d), bs = std::conj(c);
    const cplx cs = std::conj(b), ds = std::conj(a);
    const Vec2 y = stereo_south(x);
    const cplx u(0.5 * y.x, 0.5 * y.y);
    const cplx den = cs * u + ds;
    if (std::norm(den) < 1e-280) return kBasePoint;
    const cplx im = m(u, as, bs, cs, ds);
    if (std::abs(im) > 1e100) return kBasePoint;
    return stereo_south_inv(to_plane(im));
  }

  cplx a_, b_, c_, d_;
};

// Time-dependent planar vector field with compact support.  The Jacobian
// callback is optional; central finite differences fill in when absent.
struct TimeField {
  std::function<Vec2(double, const Vec2&)> eval;
  std::function<Mat2(double, const Vec2&)> jac;
  double support_radius = 0.0;

  Mat2 jacobian(double t, const Vec2& z) const {
    if (jac) return jac(t, z);
    const double h = 1e-6;
    const Vec2 fx = (eval(t, {z.x + h, z.y}) - eval(t, {z.x - h, z.y})) / (2 * h);
    const Vec2 fy = (eval(t, {z.x, z.y + h}) - eval(t, {z.x, z.y - h})) / (2 * h);
    return {fx.x, fy.x, fx.y, fy.y};
  }
};

struct FlowResult {
  Vec2 z;
  Mat2 J;
};

// Classical fixed-step RK4 for dz/ds = X(s, z), from t0 to t1, optionally
// co-integrating the tangent propagator dJ/ds = DX(s, z) J.
inline FlowResult flow(const TimeField& field, const Vec2& z0, double t0,
                       double t1, int steps_per_unit = 256,
                       bool with_jacobian = false) {
  FlowResult res{z0, Mat2::identity()};
  if (t0 == t1) return res;
  const double guard = 10.0 * field.support_radius + 10.0;
  const int n = std::max(1, (int)std::ceil(steps_per_unit * std::abs(t1 - t0)));
  const double h = (t1 - t0) / n;
  Vec2 z = z0;
  Mat2 J = Mat2::identity();
  for (int i = 0; i < n; ++i) {
    const double s = t0 + i * h;
    const Vec2 k1 = field.eval(s, z);
    const Vec2 z2 = z + 0.5 * h * k1;
    const Vec2 k2 = field.eval(s + 0.5 * h, z2);
    const Vec2 z3 = z + 0.5 * h * k2;
    const Vec2 k3 = field.eval(s + 0.5 * h, z3);
    const Vec2 z4 = z + h * k3;
    const Vec2 k4 = field.eval(s + h, z4);
    if (with_jacobian) {
      const Mat2 K1 = field.jacobian(s, z) * J;
      const Mat2 K2 = field.jacobian(s + 0.5 * h, z2) * (J + 0.5 * h * K1);
      const Mat2 K3 = field.jacobian(s + 0.5 * h, z3) * (J + 0.5 * h * K2);
      const Mat2 K4 = field.jacobian(s + h, z4) * (J + h * K3);
      J = J + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4);
    }
    z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (z.norm() > guard)
      throw NumericError("flow: trajectory escaped the field support region");
  }
  res.z = z;
  res.J = J;
  return res;
}

// Planar diffeomorphism realized as the time-(t0 -> t1) flow of a field.
class PlanarFlowMap : public Primitive {
 public:
  PlanarFlowMap(TimeField field, double t0, double t1, double support_radius,
                int steps_per_unit = 256)
      : field_(std::move(field)),
        t0_(t0),
        t1_(t1),
        support_(support_radius),
        steps_(steps_per_unit) {
    if (!(support_radius > 0.0) || steps_per_unit < 1)
      throw ValidationError("flow map: bad support radius or step count");
  }

  Domain domain() const override { return Domain::plane; }
  std::string name() const override { return "flow"; }
  double support_radius() const override { return support_; }

  Vec2 apply(const Vec2& z) const override {
    if (z.norm() >= support_) return z;
    return flow(field_, z, t0_, t1_, steps_).z;
  }
  Mat2 jacobian(const Vec2& z) const override {
    if (z.norm() >= support_) return Mat2::identity();
    return flow(field_, z, t0_, t1_, steps_, true).J;
  }
  std::pair<Vec2, Mat2> apply_with_jacobian(const Vec2& z) const override {
    if (z.norm() >= support_) return {z, Mat2::identity()};
    const FlowResult r = flow(field_, z, t0_, t1_, steps_, true);
    return {r.z, r.J};
  }
  Vec2 invert(const Vec2& z) const override {
    if (z.norm() >= support_) return z;
    return flow(field_, z, t1_, t0_, steps_).z;
  }

 private:
  TimeField field_;
  double t0_, t1_, support_;
  int steps_;
};

// Planar diffeomorphism given by closed-form value and Jacobian callbacks,
// equal to the identity outside its support radius.  Inversion is damped
// Newton seeded from a lazily built grid of forward images.
class BlendMap : public Primitive {
 public:
  BlendMap(std::string label, std::function<Vec2(const Vec2&)> eval,
           std::function<Mat2(const Vec2&)> jac, double support_radius,
           std::function<std::pair<Vec2, Mat2>(const Vec2&)> both = nullptr)
      : label_(std::move(label)),
        eval_(std::move(eval)),
        jac_(std::move(jac)),
        both_(std::move(both)),
        support_(support_radius) {
    if (!(support_radius > 0.0))
      throw ValidationError("blend map: support radius must be positive");
  }

  Domain domain() const override { return Domain::plane; }
  std::string name() const override { return label_; }
  double support_radius() const override { return support_; }

  Vec2 apply(const Vec2& z) const override {
    if (z.norm() >= support_) return z;
    return eval_(z);
  }
  Mat2 jacobian(const Vec2& z) const override {
    if (z.norm() >= support_) return Mat2::identity();
    return jac_(z);
  }
  std::pair<Vec2, Mat2> apply_with_jacobian(const Vec2& z) const override {
    if (z.norm() >= support_) return {z, Mat2::identity()};
    if (both_) return both_(z);
    return {eval_(z), jac_(z)};
  }
  Vec2 invert(const Vec2& target) const override {
    if (target.norm() >= support_) return target;
    build_seeds();
    Vec2 best = target;
    double best_d = (apply(best) - target).norm();
    for (size_t i = 0; i < seeds_.size(); ++i) {
      const double d = (seed_images_[i] - target).norm();
      if (d < best_d) {
        best_d = d;
        best = seeds_[i];
      }
    }
    return newton_invert(
        [this](const Vec2& z) { return apply(z); },
        [this](const Vec2& z) { return jacobian(z); }, target, best, label_);
  }

  // Shared damped-Newton kernel, reused by other numerically inverted maps.
  static Vec2 newton_invert(const std::function<Vec2(const Vec2&)>& fn,
                            const std::function<Mat2(const Vec2&)>& jac,
                            const Vec2& target, const Vec2& seed,
                            const std::string& who) {
    Vec2 z = seed;
    Vec2 r = fn(z) - target;
    const double tol = 1e-12 * std::max(1.0, target.norm());
    for (int it = 0; it < 50; ++it) {
      if (r.norm() <= tol) return z;
      const Vec2 step = jac(z).inverse() * r;
      double lambda = 1.0;
      for (int half = 0; half < 30; ++half) {
        const Vec2 zn = z - lambda * step;
        const Vec2 rn = fn(zn) - target;
        if (rn.norm() < r.norm()) {
          z = zn;
          r = rn;
          break;
        }
        lambda *= 0.5;
        if (half == 29)
          throw NumericError(who + ": inversion stalled at (" +
                             std::to_string(target.x) + ", " +
                             std::to_string(target.y) + "), residual " +
                             std::to_string(r.norm()));
      }
    }
    if (r.norm() <= tol) return z;
    throw NumericError(who + ": inversion did not converge at (" +
                       std::to_string(target.x) + ", " +
                       std::to_string(target.y) + "), residual " +
                       std::to_string(r.norm()));
  }

 private:
  void build_seeds() const {
    std::call_once(seed_once_, [this] {
      const int n = 32;
      seeds_.reserve(n * n);
      seed_images_.reserve(n * n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const Vec2 z{support_ * (2.0 * (i + 0.5) / n - 1.0),
                       support_ * (2.0 * (j + 0.5) / n - 1.0)};
          if (z.norm() >= support_) continue;
          seeds_.push_back(z);
          seed_images_.push_back(eval_(z));
        }
    });
  }

  std::string label_;
  std::function<Vec2(const Vec2&)> eval_;
  std::function<Mat2(const Vec2&)> jac_;
  std::function<std::pair<Vec2, Mat2>(const Vec2&)> both_;
  double support_;
  mutable std::once_flag seed_once_;
  mutable std::vector<Vec2> seeds_, seed_images_;
};

// Sphere map built by conjugating a planar chain through a chart, with an
// optional rotation applied first: x -> R^T chart^{-1}( inner( chart(R x) ) ).
// Every inner primitive must be the identity outside a finite radius, so the
// map extends smoothly across the excluded pole (which it fixes).
class ChartConjugation : public Primitive {
 public:
  ChartConjugation(Chart chart, std::vector<PrimitivePtr> inner,
                   Rotation pre = Rotation::identity())
      : chart_(chart), inner_(std::move(inner)), pre_(std::move(pre)) {
    support_ = 0.0;
    for (const PrimitivePtr& p : inner_) {
      if (!p || p->domain() != Domain::plane)
        throw ValidationError("chart conjugation: inner maps must be planar");
      if (!std::isfinite(p->support_radius()))
        throw ValidationError(
            "chart conjugation: inner maps need compact support");
      support_ = std::max(support_, p->support_radius());
    }
  }

  Domain domain() const override { return Domain::sphere; }
  std::string name() const override {
    return chart_ == Chart::north ? "chart_conj_north" : "chart_conj_south";
  }
  double planar_support() const { return support_; }

  Vec3 apply(const Vec3& x) const override {
    const Vec3 xr = pre_ * x;
    if (near_pole(xr)) return x;
    const Vec2 z = chart_forward(chart_, xr);
    if (z.norm() >= support_) return x;
    Vec2 w = z;
    for (const PrimitivePtr& p : inner_) w = p->apply(w);
    return sphere_normalize(pre_.matrix().transpose() *
                            chart_backward(chart_, w));
  }

  Mat3 tangent(const Vec3& x) const override {
    return apply_with_tangent(x).second;
  }

  std::pair<Vec3, Mat3> apply_with_tangent(const Vec3& x) const override {
    const Vec3 xr = pre_ * x;
    if (near_pole(xr)) return {x, Mat3::identity()};
    const Vec2 z = chart_forward(chart_, xr);
    if (z.norm() >= support_) return {x, Mat3::identity()};
    Vec2 w = z;
    Mat2 J = Mat2::identity();
    for (const PrimitivePtr& p : inner_) {
      const auto [wn, Jn] = p->apply_with_jacobian(w);
      w = wn;
      J = Jn * J;
    }
    const Mat3 inner3 = ambient_from_chart(chart_inv_diff(chart_, w), J,
                                           chart_diff(chart_, xr));
    const Mat3 T = pre_.matrix().transpose() * inner3 * pre_.matrix();
    return {sphere_normalize(pre_.matrix().transpose() *
                             chart_backward(chart_, w)),
            T};
  }

  Vec3 invert(const Vec3& xp) const override {
    const Vec3 xr = pre_ * xp;
    if (near_pole(xr)) return xp;
    const Vec2 z = chart_forward(chart_, xr);
    if (z.norm() >= support_) return xp;
    Vec2 w = z;
    for (auto it = inner_.rbegin(); it != inner_.rend(); ++it)
      w = (*it)->invert(w);
    return sphere_normalize(pre_.matrix().transpose() *
                            chart_backward(chart_, w));
  }

 private:
  // The chart radius at x is 2*sqrt((2 - d^2)/d^2) with d = |x - pole|, so
  // d^2 <= 16/(support^2 + 4) guarantees the chart value lands at or beyond
  // the inner support.  Returning x outright there keeps the map exact near
  // the excluded pole and never asks the chart for a point it cannot take.
  bool near_pole(const Vec3& xr) const {
    const Vec3 pole = chart_pole(chart_);
    return (xr - pole).norm2() <= 16.0 / (support_ * support_ + 4.0);
  }

  Chart chart_;
  std::vector<PrimitivePtr> inner_;
  Rotation pre_;
  double support_;
};

// Ordered composition of primitives over one domain, applied left to right.
class DiffeoChain {
 public:
  explicit DiffeoChain(Domain d, std::vector<PrimitivePtr> prims = {})
      : domain_(d), prims_(std::move(prims)) {
    for (const PrimitivePtr& p : prims_) check(p);
  }

  Domain domain() const { return domain_; }
  size_t size() const { return prims_.size(); }
  const std::vector<PrimitivePtr>& primitives() const { return prims_; }
  void push_back(PrimitivePtr p) {
    check(p);
    prims_.push_back(std::move(p));
  }

  Vec3 apply(const Vec3& x) const {
    need(Domain::sphere);
    Vec3 v = x;
    for (size_t i = 0; i < prims_.size(); ++i)
      v = guarded(i, [&] { return prims_[i]->apply(v); });
    return v;
  }

  Mat3 tangent(const Vec3& x) const { return apply_with_tangent(x).second; }

  std::pair<Vec3, Mat3> apply_with_tangent(const Vec3& x) const {
    need(Domain::sphere);
    Vec3 v = x;
    Mat3 J = Mat3::identity();
    for (size_t i = 0; i < prims_.size(); ++i) {
      const auto r = guarded(i, [&] { return prims_[i]->apply_with_tangent(v); });
      v = r.first;
      J = r.second * J;
    }
    return {v, J};
  }

  Vec3 invert(const Vec3& x) const {
    need(Domain::sphere);
    Vec3 v = x;
    for (size_t i = prims_.size(); i-- > 0;)
      v = guarded(i, [&] { return prims_[i]->invert(v); });
    return v;
  }

  Vec2 apply(const Vec2& z) const {
    need(Domain::plane);
    Vec2 v = z;
    for (size_t i = 0; i < prims_.size(); ++i)
      v = guarded(i, [&] { return prims_[i]->apply(v); });
    return v;
  }

  Mat2 jacobian(const Vec2& z) const { return apply_with_jacobian(z).second; }

  std::pair<Vec2, Mat2> apply_with_jacobian(const Vec2& z) const {
    need(Domain::plane);
    Vec2 v = z;
    Mat2 J = Mat2::identity();
    for (size_t i = 0; i < prims_.size(); ++i) {
      const auto r =
          guarded(i, [&] { return prims_[i]->apply_with_jacobian(v); });
      v = r.first;
      J = r.second * J;
    }
    return {v, J};
  }

  Vec2 invert(const Vec2& z) const {
    need(Domain::plane);
    Vec2 v = z;
    for (size_t i = prims_.size(); i-- > 0;)
      v = guarded(i, [&] { return prims_[i]->invert(v); });
    return v;
  }

 private:
  void check(const PrimitivePtr& p) const {
    if (!p) throw ValidationError("chain: null primitive");
    if (p->domain() != domain_)
      throw ValidationError("chain: primitive domain mismatch");
  }
  void need(Domain d) const {
    if (domain_ != d)
      throw ValidationError("chain: queried on the wrong domain");
  }
  template <class F>
  auto guarded(size_t i, F&& body) const -> decltype(body()) {
    try {
      return body();
    } catch (const DomainError& e) {
      throw DomainError("primitive " + std::to_string(i) + " (" +
                        prims_[i]->name() + "): " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("primitive " + std::to_string(i) + " (" +
                         prims_[i]->name() + "): " + e.what());
    }
  }

  Domain domain_;
  std::vector<PrimitivePtr> prims_;
};

}  // namespace spheredr
