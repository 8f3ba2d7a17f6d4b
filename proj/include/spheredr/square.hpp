#pragma once

// Retraction of boundary-respecting diffeomorphisms of the unit square onto
// the identity.  The horizontal unit frame is pushed forward through the map,
// its complex logarithm is contracted linearly to zero, and the map is
// rebuilt from the exit curves of the contracted frame; a final edge
// correction pins the one boundary edge the flow is allowed to slide along.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "spheredr/core.hpp"
#include "spheredr/smooth.hpp"

namespace spheredr {

using PlanarMap = std::function<Vec2(const Vec2&)>;
using PlanarMapJac = std::function<std::pair<Vec2, Mat2>(const Vec2&)>;

// Square maps come in two flavours: fixed on a collar of the whole boundary,
// or fixed on a collar of three sides while the right edge may slide along
// itself, with the horizontal frame pinned to e1 near that edge.
enum class SquareClass { boundary_fixed, exit_slide };

struct SquareMap {
  PlanarMap eval;
  PlanarMapJac eval_jac;
  PlanarMap inv;        // optional; Newton inversion is used when absent
  SquareClass cls = SquareClass::boundary_fixed;
  double collar = 0.1;  // identity (resp. frame-pinned) within this margin
};

inline SquareMap square_identity(double collar = 0.45,
                                 SquareClass cls = SquareClass::boundary_fixed) {
  SquareMap f;
  f.eval = [](const Vec2& p) { return p; };
  f.eval_jac = [](const Vec2& p) {
    return std::make_pair(p, Mat2{1.0, 0.0, 0.0, 1.0});
  };
  f.inv = [](const Vec2& p) { return p; };
  f.cls = cls;
  f.collar = collar;
  return f;
}

// Preimage under a square map: the declared inverse when present, otherwise
// damped Newton seeded at the target, with one coarse rescue sweep.
inline Vec2 square_invert(const SquareMap& f, const Vec2& w) {
  if (f.inv) return f.inv(w);
  const double tol = 1e-13 * (1.0 + w.norm());
  auto polish = [&](Vec2 xi) {
    double res = (f.eval(xi) - w).norm();
    for (int it = 0; it < 48 && res > tol; ++it) {
      const auto [v, jac] = f.eval_jac(xi);
      if (std::abs(jac.det()) < 1e-14) break;
      Vec2 step = jac.inverse() * (v - w);
      const double sn = step.norm();
      if (sn > 0.5) step = step * (0.5 / sn);
      xi = xi - step;
      res = (f.eval(xi) - w).norm();
    }
    return std::make_pair(xi, res);
  };
  auto [xi, res] = polish(w);
  if (res <= 100.0 * tol) return xi;
  Vec2 seed = w;
  double best = res;
  for (int i = 0; i <= 16; ++i)
    for (int j = 0; j <= 16; ++j) {
      const Vec2 p{i / 16.0, j / 16.0};
      const double d = (f.eval(p) - w).norm();
      if (d < best) {
        best = d;
        seed = p;
      }
    }
  auto [xi2, res2] = polish(seed);
  if (res2 <= 100.0 * tol) return xi2;
  throw NumericError("square map inversion failed at (" + std::to_string(w.x) +
                     ", " + std::to_string(w.y) + ")");
}

// Sampled certificate of the declared collar: 400 points in the fixed bands,
// plus edge checks for the slide class.
inline void check_square_collar(const SquareMap& f) {
  if (!(f.collar > 0.0 && f.collar < 0.5))
    throw ValidationError("square map: collar width must lie in (0, 1/2)");
  const Mat2 ident{1.0, 0.0, 0.0, 1.0};
  auto expect_identity = [&](const Vec2& p) {
    const auto [v, jac] = f.eval_jac(p);
    if ((v - p).norm() > 1e-9)
      throw ValidationError(
          "square map: not the identity on its declared boundary collar");
    if ((jac - ident).frobenius() > 1e-7)
      throw ValidationError(
          "square map: Jacobian deviates from I on the declared collar");
  };
  const double depths[2] = {0.25 * f.collar, 0.8 * f.collar};
  for (int k = 0; k < 50; ++k) {
    const double u = (k + 0.5) / 50.0;
    for (const double d : depths) {
      expect_identity({u, d});
      expect_identity({u, 1.0 - d});
      expect_identity({d, u});
      if (f.cls == SquareClass::boundary_fixed) {
        expect_identity({1.0 - d, u});
      } else {
        const auto [v, jac] = f.eval_jac({1.0 - d, u});
        (void)v;
        if ((Vec2{jac.m[0][0], jac.m[1][0]} - Vec2{1.0, 0.0}).norm() > 1e-9)
          throw ValidationError(
              "square map: horizontal frame not pinned near the exit edge");
      }
    }
    if (f.cls == SquareClass::exit_slide) {
      if (std::abs(f.eval({1.0, u}).x - 1.0) > 1e-9)
        throw ValidationError("square map: the exit edge must map into itself");
    }
  }
}

inline double min_jacobian_det(const SquareMap& f, int n = 64) {
  double lo = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vec2 p{(i + 0.5) / n, (j + 0.5) / n};
      lo = std::min(lo, f.eval_jac(p).second.det());
    }
  return lo;
}

inline double square_sup_distance(const SquareMap& a, const SquareMap& b,
                                  int n = 64) {
  double hi = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vec2 p{(i + 0.5) / n, (j + 0.5) / n};
      hi = std::max(hi, (a.eval(p) - b.eval(p)).norm());
    }
  return hi;
}

inline double square_identity_distance(const SquareMap& a, int n = 64) {
  double hi = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vec2 p{(i + 0.5) / n, (j + 0.5) / n};
      hi = std::max(hi, (a.eval(p) - p).norm());
    }
  return hi;
}

// Field advecting the horizontal frame: value at (x, y) is the first
// Jacobian column of f at the preimage of (x, y).
inline PlanarMap pushforward_e1(const SquareMap& f) {
  SquareMap fc = f;
  return [fc](const Vec2& p) {
    const Vec2 xi = square_invert(fc, p);
    const Mat2 jac = fc.eval_jac(xi).second;
    const Vec2 col{jac.m[0][0], jac.m[1][0]};
    if (col.norm() < 1e-10)
      throw NumericError(
          "advected frame vanished: the first Jacobian column of a "
          "diffeomorphism must stay nonzero");
    return col;
  };
}

namespace detail {

inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

}  // namespace detail

// Continuous logarithm of a non-vanishing planar field: magnitudes are taken
// pointwise, the angle branch is fixed on a grid by unwrapping from the
// origin corner (bottom row first, then up each column), and off-grid points
// unwrap locally against the nearest node.  Valid only while adjacent nodes
// never disagree by close to a half turn.
class LiftedField {
 public:
  LiftedField(PlanarMap field, int grid_n)
      : field_(std::move(field)), n_(grid_n) {
    if (n_ < 8 || n_ > 4096)
      throw ValidationError("frame lift: grid resolution out of range");
    const int m = n_ + 1;
    std::vector<double> raw(static_cast<size_t>(m) * m);
    auto theta = std::make_shared<std::vector<double>>(raw.size());
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i) {
        const Vec2 h =
            field_({static_cast<double>(i) / n_, static_cast<double>(j) / n_});
        if (!(h.norm2() > 0.0))
          throw NumericError("frame lift: the field vanishes at a grid node");
        raw[idx(i, j)] = std::atan2(h.y, h.x);
      }
    std::vector<double>& th = *theta;
    th[idx(0, 0)] = raw[idx(0, 0)];
    auto link = [&](int from, int to) {
      const double inc = detail::wrap_angle(raw[to] - raw[from]);
      if (std::abs(inc) >= kPi - 0.1)
        throw NumericError(
            "frame lift: the frame turns nearly a half turn between adjacent "
            "grid nodes at resolution " +
            std::to_string(n_) + "; a finer grid is required");
      max_inc_ = std::max(max_inc_, std::abs(inc));
      th[to] = th[from] + inc;
    };
    for (int i = 1; i < m; ++i) link(idx(i - 1, 0), idx(i, 0));
    for (int i = 0; i < m; ++i)
      for (int j = 1; j < m; ++j) link(idx(i, j - 1), idx(i, j));
    // Branch consistency across columns: on a simply connected grid the
    // unwrapped angles of horizontal neighbours must also stay close.
    for (int j = 1; j < m; ++j)
      for (int i = 1; i < m; ++i) {
        const double d = th[idx(i, j)] - th[idx(i - 1, j)];
        if (std::abs(d) >= kPi - 0.1)
          throw NumericError(
              "frame lift: inconsistent angle branches between grid columns "
              "at resolution " +
              std::to_string(n_) + "; a finer grid is required");
        max_inc_ = std::max(max_inc_, std::abs(d));
      }
    // Snap each node to the exact 2-pi shift of its own raw angle, so the
    // unwrapping accumulates no rounding drift and collar nodes are exact.
    for (size_t k = 0; k < th.size(); ++k)
      th[k] = raw[k] + 2.0 * kPi * std::round((th[k] - raw[k]) / (2.0 * kPi));
    theta_ = std::move(theta);
  }

  // Angle of h at p on the continuous branch, fixed by the nearest node.
  double branch_theta(const Vec2& p, const Vec2& h) const {
    const double rawa = std::atan2(h.y, h.x);
    const int i = std::clamp(static_cast<int>(std::lround(p.x * n_)), 0, n_);
    const int j = std::clamp(static_cast<int>(std::lround(p.y * n_)), 0, n_);
    const double ref = (*theta_)[idx(i, j)];
    return rawa + 2.0 * kPi * std::round((ref - rawa) / (2.0 * kPi));
  }

  Vec2 value(const Vec2& p) const {
    const Vec2 h = field_(p);
    const double n2 = h.norm2();
    if (!(n2 > 0.0))
      throw NumericError("frame lift: field vanished at an evaluation point");
    return {0.5 * std::log(n2), branch_theta(p, h)};
  }

  Vec2 field_value(const Vec2& p) const { return field_(p); }
  int grid_n() const { return n_; }
  double max_increment() const { return max_inc_; }
  double theta_node(int i, int j) const { return (*theta_)[idx(i, j)]; }

 private:
  size_t idx(int i, int j) const {
    return static_cast<size_t>(j) * (n_ + 1) + i;
  }

  PlanarMap field_;
  int n_ = 0;
  std::shared_ptr<const std::vector<double>> theta_;
  double max_inc_ = 0.0;
};

inline LiftedField log_lift(const PlanarMap& field, int grid_n = 128) {
  return LiftedField(field, grid_n);
}

// Doubling refinement: accept the first grid whose increments stay under a
// quarter turn; at the cap, accept whatever still unwraps, else rethrow.
inline LiftedField log_lift_refined(const PlanarMap& field, int start_n = 128,
                                    int cap = 1024) {
  for (int n = start_n;; n *= 2) {
    const bool last = 2 * n > cap;
    try {
      LiftedField lf(field, n);
      if (lf.max_increment() < 0.5 * kPi || last) return lf;
    } catch (const NumericError&) {
      if (last) throw;
    }
  }
}

// Straight-line contraction of the lift: magnitude |h|^(1-t), angle scaled
// by (1-t).  At t = 1 the field is the constant horizontal frame, exactly.
inline PlanarMap field_homotopy(const LiftedField& lifted, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw ValidationError("field homotopy: time must lie in [0, 1]");
  if (t == 1.0)
    return [](const Vec2&) { return Vec2{1.0, 0.0}; };
  const double w = 1.0 - t;
  const LiftedField lf = lifted;
  return [lf, w](const Vec2& p) {
    const Vec2 l = lf.value(p);
    const double mag = std::exp(w * l.x);
    const double ang = w * l.y;
    return Vec2{mag * std::cos(ang), mag * std::sin(ang)};
  };
}

// One advection trajectory with cubic Hermite dense output on uniform nodes.
struct Curve {
  std::vector<Vec2> pos, vel;  // nodes at s = k * h
  double h = 0.0;
  double exit = 0.0;  // first arc time with x = 1

  Vec2 at(double s) const { return hermite(s, false); }
  Vec2 velocity(double s) const { return hermite(s, true); }

 private:
  Vec2 hermite(double s, bool deriv) const {
    const int m = static_cast<int>(pos.size()) - 1;
    double u = std::clamp(s / h, 0.0, static_cast<double>(m));
    const int k = std::min(static_cast<int>(u), m - 1);
    u -= k;
    const Vec2 p0 = pos[k], p1 = pos[k + 1];
    const Vec2 v0 = vel[k] * h, v1 = vel[k + 1] * h;
    const double u2 = u * u, u3 = u2 * u;
    if (!deriv)
      return p0 * (2.0 * u3 - 3.0 * u2 + 1.0) + v0 * (u3 - 2.0 * u2 + u) +
             p1 * (3.0 * u2 - 2.0 * u3) + v1 * (u3 - u2);
    return (p0 * (6.0 * u2 - 6.0 * u) + v0 * (3.0 * u2 - 4.0 * u + 1.0) +
            p1 * (6.0 * u - 6.0 * u2) + v1 * (3.0 * u2 - 2.0 * u)) /
           h;
  }
};

namespace detail {

// Bisect the final Hermite segment for the x = 1 crossing.
inline void resolve_exit(Curve& c) {
  const int m = static_cast<int>(c.pos.size()) - 1;
  double lo = (m - 1) * c.h, hi = m * c.h;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (c.at(mid).x < 1.0 ? lo : hi) = mid;
  }
  c.exit = hi;
  if (std::abs(c.at(c.exit).x - 1.0) > 1e-10)
    throw NumericError("exit detection: crossing residual exceeds 1e-10");
}

[[noreturn]] inline void no_exit_failure(double t_max) {
  throw NumericError(
      "integral curve failed to reach the right edge before arc time " +
      std::to_string(t_max) +
      "; the advection field must drive every point out, so this indicates "
      "a degenerate field or an integration fault");
}

}  // namespace detail

// Classical fixed-step RK4 from (0, y0) until the first node past x = 1.
inline Curve integral_curve(const PlanarMap& field, double y0,
                            int steps_per_unit = 256, double t_max = 100.0) {
  if (steps_per_unit < 8)
    throw ValidationError("integral curve: too few steps per unit arc time");
  Curve c;
  c.h = 1.0 / steps_per_unit;
  const int max_nodes = static_cast<int>(t_max * steps_per_unit) + 2;
  Vec2 p{0.0, y0};
  for (int k = 0;; ++k) {
    const Vec2 k1 = field(p);
    c.pos.push_back(p);
    c.vel.push_back(k1);
    if (k > 0 && p.x >= 1.0) {
      detail::resolve_exit(c);
      return c;
    }
    if (k >= max_nodes) detail::no_exit_failure(t_max);
    const Vec2 k2 = field(p + (0.5 * c.h) * k1);
    const Vec2 k3 = field(p + (0.5 * c.h) * k2);
    const Vec2 k4 = field(p + c.h * k3);
    p = p + (c.h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
}

namespace detail {

// Trajectory of the contracted frame field computed in preimage coordinates:
// integrating xi' = (df|_xi)^(-1) phi(f(xi)) keeps the curve gamma = f(xi)
// on the same field while needing one Jacobian evaluation per stage and no
// inversions.  Node velocities are the exact field values, so the Hermite
// dense output matches the trajectory to fourth order.
inline Curve co_curve(const SquareMap& f, const LiftedField& lift, double t,
                      double y0, int steps_per_unit, double t_max = 100.0) {
  Curve c;
  if (t == 1.0) {
    // Contracted field is the constant horizontal frame: the trajectory is a
    // straight crossing and the Hermite form reproduces it exactly.
    c.h = 1.0;
    c.pos = {{0.0, y0}, {1.0, y0}};
    c.vel = {{1.0, 0.0}, {1.0, 0.0}};
    c.exit = 1.0;
    return c;
  }
  const double w = 1.0 - t;
  auto rhs = [&](const Vec2& xi, Vec2* node_pos, Vec2* node_vel) -> Vec2 {
    const auto [v, jac] = f.eval_jac(xi);
    const Vec2 hv{jac.m[0][0], jac.m[1][0]};
    const double n2 = hv.norm2();
    if (!(n2 > 1e-20))
      throw NumericError("advected frame vanished along an exit curve");
    const double mag = std::exp(0.5 * w * std::log(n2));
    const double ang = w * lift.branch_theta(v, hv);
    const Vec2 phi{mag * std::cos(ang), mag * std::sin(ang)};
    if (node_pos) {
      *node_pos = v;
      *node_vel = phi;
    }
    return jac.inverse() * phi;
  };
  c.h = 1.0 / steps_per_unit;
  const int max_nodes = static_cast<int>(t_max * steps_per_unit) + 2;
  Vec2 xi{0.0, y0};
  for (int k = 0;; ++k) {
    Vec2 posk, velk;
    const Vec2 k1 = rhs(xi, &posk, &velk);
    c.pos.push_back(posk);
    c.vel.push_back(velk);
    if (k > 0 && posk.x >= 1.0) {
      resolve_exit(c);
      return c;
    }
    if (k >= max_nodes) no_exit_failure(t_max);
    const Vec2 k2 = rhs(xi + (0.5 * c.h) * k1, nullptr, nullptr);
    const Vec2 k3 = rhs(xi + (0.5 * c.h) * k2, nullptr, nullptr);
    const Vec2 k4 = rhs(xi + c.h * k3, nullptr, nullptr);
    xi = xi + (c.h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
}

}  // namespace detail

// Increasing map of [0, 1] fixing both ends, held as Hermite data on a
// uniform grid.  Used for the slide of the exit edge and its straightening.
class IntervalMap {
 public:
  IntervalMap(std::vector<double> values, std::vector<double> derivs) {
    if (values.size() != derivs.size() || values.size() < 9)
      throw ValidationError("interval map: need matching grids of 9+ nodes");
    n_ = static_cast<int>(values.size()) - 1;
    if (std::abs(values.front()) > 1e-9 || std::abs(values.back() - 1.0) > 1e-9)
      throw ValidationError("interval map: must fix 0 and 1");
    for (int k = 0; k <= n_; ++k) {
      if (!(derivs[k] > 0.0))
        throw ValidationError("interval map: sampled slope must stay positive");
      if (k > 0 && !(values[k] > values[k - 1]))
        throw ValidationError("interval map: values must increase strictly");
    }
    v_ = std::make_shared<const std::vector<double>>(std::move(values));
    d_ = std::make_shared<const std::vector<double>>(std::move(derivs));
  }

  static IntervalMap tabulate(const std::function<double(double)>& g,
                              const std::function<double(double)>& dg,
                              int n = 256) {
    std::vector<double> v(n + 1), d(n + 1);
    for (int k = 0; k <= n; ++k) {
      const double x = static_cast<double>(k) / n;
      v[k] = g(x);
      d[k] = dg(x);
    }
    return IntervalMap(std::move(v), std::move(d));
  }

  double value(double x) const { return hermite(x, false); }
  double deriv(double x) const { return hermite(x, true); }

  double inverse(double y) const {
    if (y < -1e-9 || y > 1.0 + 1e-9)
      throw DomainError("interval map: inverse target outside [0, 1]");
    y = std::clamp(y, 0.0, 1.0);
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (value(mid) < y ? lo : hi) = mid;
    }
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 3; ++it) {
      const double dv = deriv(x);
      if (!(dv > 1e-12)) break;
      x = std::clamp(x - (value(x) - y) / dv, 0.0, 1.0);
    }
    return x;
  }

  // Width of the end bands on which the tabulated data is exactly the
  // identity, as a fraction of the interval.
  double identity_end_width() const {
    const std::vector<double>& v = *v_;
    const std::vector<double>& d = *d_;
    auto is_id = [&](int k) {
      return std::abs(v[k] - static_cast<double>(k) / n_) <= 1e-12 &&
             std::abs(d[k] - 1.0) <= 1e-12;
    };
    int lo = 0;
    while (lo < n_ && is_id(lo + 1)) ++lo;
    int hi = 0;
    while (hi < n_ && is_id(n_ - hi - 1)) ++hi;
    return static_cast<double>(std::min(lo, hi)) / n_;
  }

  int grid_n() const { return n_; }
  double node_value(int k) const { return (*v_)[k]; }
  double node_deriv(int k) const { return (*d_)[k]; }

 private:
  double hermite(double x, bool deriv) const {
    double u = std::clamp(x, 0.0, 1.0) * n_;
    const int k = std::min(static_cast<int>(u), n_ - 1);
    u -= k;
    const double hstep = 1.0 / n_;
    const double p0 = (*v_)[k], p1 = (*v_)[k + 1];
    const double m0 = (*d_)[k] * hstep, m1 = (*d_)[k + 1] * hstep;
    const double u2 = u * u, u3 = u2 * u;
    if (!deriv)
      return p0 * (2.0 * u3 - 3.0 * u2 + 1.0) + m0 * (u3 - 2.0 * u2 + u) +
             p1 * (3.0 * u2 - 2.0 * u3) + m1 * (u3 - u2);
    return (p0 * (6.0 * u2 - 6.0 * u) + m0 * (3.0 * u2 - 4.0 * u + 1.0) +
            p1 * (6.0 * u - 6.0 * u2) + m1 * (3.0 * u2 - 2.0 * u)) /
           hstep;
  }

  int n_ = 0;
  std::shared_ptr<const std::vector<double>> v_, d_;
};

// Straight-line retraction of interval maps onto the identity, node-wise
// exact: values (1-t) g + t x, slopes (1-t) g' + t.
inline IntervalMap interval_retraction(const IntervalMap& g, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw ValidationError("interval retraction: time must lie in [0, 1]");
  const int n = g.grid_n();
  std::vector<double> v(n + 1), d(n + 1);
  for (int k = 0; k <= n; ++k) {
    const double x = static_cast<double>(k) / n;
    v[k] = (1.0 - t) * g.node_value(k) + t * x;
    d[k] = (1.0 - t) * g.node_deriv(k) + t;
  }
  return IntervalMap(std::move(v), std::move(d));
}

// Slide of the exit edge: y -> second component of f(1, y), with its slope
// read off the Jacobian.  Must be an increasing map fixing the ends.
inline IntervalMap boundary_trace(const SquareMap& f, int n = 256) {
  std::vector<double> v(n + 1), d(n + 1);
  for (int k = 0; k <= n; ++k) {
    const double y = static_cast<double>(k) / n;
    const auto [q, jac] = f.eval_jac({1.0, y});
    if (std::abs(q.x - 1.0) > 1e-9)
      throw ValidationError("boundary trace: the exit edge must map into itself");
    v[k] = q.y;
    d[k] = jac.m[1][1];
  }
  try {
    return IntervalMap(std::move(v), std::move(d));
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("boundary trace: ") + e.what());
  }
}

// Post-compose with the edge correction Psi(x, y) = (x, (1-b(x)) g^{-1}(y)
// + b(x) y), b = 1 near x = 0 and 0 near x = 1: the result fixes a collar of
// the whole boundary.  On maps already fixing it, g = id and Psi = id.
inline SquareMap boundary_fix(const SquareMap& f) {
  const IntervalMap g = boundary_trace(f);
  const SquareMap fc = f;
  SquareMap out;
  out.cls = SquareClass::boundary_fixed;
  out.collar = std::min(f.collar, 0.19);
  out.eval = [fc, g](const Vec2& p) {
    const Vec2 q = fc.eval(p);
    const double b = boundary_blend(q.x);
    return Vec2{q.x, (1.0 - b) * g.inverse(q.y) + b * q.y};
  };
  out.eval_jac = [fc, g](const Vec2& p) {
    const auto [q, jac] = fc.eval_jac(p);
    const double b = boundary_blend(q.x);
    const double bp = boundary_blend_deriv(q.x);
    const double gi = g.inverse(q.y);
    const double gslope = g.deriv(gi);
    const Mat2 dpsi{1.0, 0.0, bp * (q.y - gi), (1.0 - b) / gslope + b};
    return std::make_pair(Vec2{q.x, (1.0 - b) * gi + b * q.y}, dpsi * jac);
  };
  out.inv = [fc, g](const Vec2& wp) {
    const double b = boundary_blend(wp.x);
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      ((1.0 - b) * g.inverse(mid) + b * mid < wp.y ? lo : hi) = mid;
    }
    return square_invert(fc, {wp.x, 0.5 * (lo + hi)});
  };
  return out;
}

inline constexpr double kCurveFd = 1e-4;  // cross-curve finite difference

// Per-map machinery for the square retraction: the frame lift is computed
// once, trajectories are cached by (time, starting height) and shared by
// every stage evaluation.
class SquareRetraction {
 public:
  explicit SquareRetraction(SquareMap f, int curve_steps = 256,
                            int lift_grid = 128)
      : st_(std::make_shared<State>(std::move(f), curve_steps, lift_grid)) {}

  const SquareMap& input() const { return st_->f; }
  const LiftedField& lift() const { return st_->lift; }

  std::shared_ptr<const Curve> curve(double t, double y) const {
    return fetch(st_, t, y);
  }

  double exit_time(double t, double y) const { return curve(t, y)->exit; }

  // Reparametrized trajectory map: (x, y) -> gamma_{t,y}(chi(x, exit)).
  SquareMap stage_e(double t) const {
    if (!(t >= 0.0 && t <= 1.0))
      throw ValidationError("square stage: time must lie in [0, 1]");
    if (t == 1.0) return square_identity(0.45, SquareClass::exit_slide);
    auto self = st_;
    SquareMap out;
    out.cls = SquareClass::exit_slide;
    out.collar = std::min(st_->f.collar, 0.02);
    out.eval = [self, t](const Vec2& p) {
      const auto c = fetch(self, t, p.y);
      return c->at(chi(p.x, c->exit));
    };
    out.eval_jac = [self, t](const Vec2& p) {
      const auto c = fetch(self, t, p.y);
      const double s = chi(p.x, c->exit);
      const Vec2 val = c->at(s);
      const Vec2 dx = chi_dx(p.x, c->exit) * c->velocity(s);
      const auto cp = fetch(self, t, p.y + kCurveFd);
      const auto cm = fetch(self, t, p.y - kCurveFd);
      const Vec2 vp = cp->at(chi(p.x, cp->exit));
      const Vec2 vm = cm->at(chi(p.x, cm->exit));
      const Vec2 dy = (vp - vm) / (2.0 * kCurveFd);
      return std::make_pair(val, Mat2{dx.x, dy.x, dx.y, dy.y});
    };
    out.inv = nullptr;
    return out;
  }

  SquareMap stage_f(double t) const { return boundary_fix(stage_e(t)); }

 private:
  struct State {
    State(SquareMap f_, int steps_, int lift_grid)
        : f(std::move(f_)),
          steps(steps_),
          lift(log_lift_refined(pushforward_e1(f), lift_grid)) {
      if (steps < 8)
        throw ValidationError("square retraction: too few curve steps");
    }
    SquareMap f;
    int steps;
    LiftedField lift;
    std::map<std::pair<double, double>, std::shared_ptr<const Curve>> curves;
    std::mutex gate;
  };

  static std::shared_ptr<const Curve> fetch(const std::shared_ptr<State>& st,
                                            double t, double y) {
    std::lock_guard<std::mutex> lock(st->gate);
    const auto key = std::make_pair(t, y);
    const auto it = st->curves.find(key);
    if (it != st->curves.end()) return it->second;
    auto c = std::make_shared<const Curve>(
        detail::co_curve(st->f, st->lift, t, y, st->steps));
    if (st->curves.size() >= 65536) st->curves.clear();
    st->curves.emplace(key, c);
    return c;
  }

  std::shared_ptr<State> st_;
};

inline SquareMap stage_e(const SquareMap& f, double t, int curve_steps = 256) {
  return SquareRetraction(f, curve_steps).stage_e(t);
}

inline SquareMap stage_f(const SquareMap& f, double t, int curve_steps = 256) {
  return SquareRetraction(f, curve_steps).stage_f(t);
}

}  // namespace spheredr
