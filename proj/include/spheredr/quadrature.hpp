#pragma once

#include <array>
#include <functional>
#include <vector>

#include "spheredr/core.hpp"
#include "spheredr/gauss.hpp"

namespace spheredr {

// Tensor Gauss-Legendre rule on the unit disk in polar form, carrying the
// finite-difference step used when sampling derivatives at its nodes.
struct DiskGrid {
  std::vector<double> radii, radial_weights;    // on (0, 1)
  std::vector<double> angles, angular_weights;  // on (0, 2 pi)
  double derivative_step = 1e-2;

  DiskGrid(int n_radial = 48, int n_angular = 64, double h = 1e-2)
      : derivative_step(h) {
    if (n_radial < 2 || n_angular < 2 || !(h > 0.0))
      throw ValidationError("DiskGrid: bad construction parameters");
    const GaussRule& rr = gauss_rule(n_radial);
    for (int i = 0; i < n_radial; ++i) {
      radii.push_back(0.5 * (rr.nodes[i] + 1.0));
      radial_weights.push_back(0.5 * rr.weights[i]);
    }
    const GaussRule& ra = gauss_rule(n_angular);
    for (int j = 0; j < n_angular; ++j) {
      angles.push_back(kPi * (ra.nodes[j] + 1.0));
      angular_weights.push_back(kPi * ra.weights[j]);
    }
  }

  int node_count() const {
    return static_cast<int>(radii.size() * angles.size());
  }
  Vec2 node(int k) const {
    const int na = static_cast<int>(angles.size());
    const double r = radii[k / na], th = angles[k % na];
    return {r * std::cos(th), r * std::sin(th)};
  }
  // Quadrature weight including the polar Jacobian r.
  double weight(int k) const {
    const int na = static_cast<int>(angles.size());
    return radial_weights[k / na] * angular_weights[k % na] * radii[k / na];
  }
};

using ScalarField = std::function<double(const Vec2&)>;

template <class F>
double disk_integrate(const F& fn, const DiskGrid& grid) {
  double s = 0.0;
  const int n = grid.node_count();
  for (int k = 0; k < n; ++k) s += grid.weight(k) * fn(grid.node(k));
  return s;
}

// Canonical packing of the 10 partial-derivative multi-indices with total
// order <= 3: slot(ax, ay) groups them by total order, x-heavy first.
inline int deriv_slot(int ax, int ay) {
  static const int base[4] = {0, 1, 3, 6};
  const int total = ax + ay;
  if (total < 0 || total > 3 || ax < 0 || ay < 0)
    throw ValidationError("deriv_slot: bad multi-index");
  return base[total] + ay;
}

using DerivSet = std::array<double, 10>;

namespace detail {

// All partial derivatives up to total order 3 from one 5 x 5 central
// stencil: 4th-order formulas through order 2, 2nd-order for order 3.
template <class F>
DerivSet stencil_derivatives(const F& fn, const Vec2& y, double h, int order) {
  DerivSet out{};
  if (order == 0) {
    out[0] = fn(y);
    return out;
  }
  double f[5][5];
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j)
      f[i + 2][j + 2] = fn({y.x + i * h, y.y + j * h});

  const double d1[5] = {1.0, -8.0, 0.0, 8.0, -1.0};          // /(12 h)
  const double d2[5] = {-1.0, 16.0, -30.0, 16.0, -1.0};      // /(12 h^2)
  const double d3[5] = {-1.0, 2.0, 0.0, -2.0, 1.0};          // /(2 h^3)

  out[deriv_slot(0, 0)] = f[2][2];

  double s10 = 0.0, s01 = 0.0, s20 = 0.0, s02 = 0.0;
  for (int i = 0; i < 5; ++i) {
    s10 += d1[i] * f[i][2];
    s01 += d1[i] * f[2][i];
    s20 += d2[i] * f[i][2];
    s02 += d2[i] * f[2][i];
  }
  out[deriv_slot(1, 0)] = s10 / (12.0 * h);
  out[deriv_slot(0, 1)] = s01 / (12.0 * h);
  if (order < 2) return out;

  out[deriv_slot(2, 0)] = s20 / (12.0 * h * h);
  out[deriv_slot(0, 2)] = s02 / (12.0 * h * h);
  double s11 = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) s11 += d1[i] * d1[j] * f[i][j];
  out[deriv_slot(1, 1)] = s11 / (144.0 * h * h);
  if (order < 3) return out;

  double s30 = 0.0, s03 = 0.0;
  for (int i = 0; i < 5; ++i) {
    s30 += d3[i] * f[i][2];
    s03 += d3[i] * f[2][i];
  }
  out[deriv_slot(3, 0)] = s30 / (2.0 * h * h * h);
  out[deriv_slot(0, 3)] = s03 / (2.0 * h * h * h);

  // Mixed third derivatives: 3-point second difference crossed with a
  // 3-point first difference, both 2nd-order accurate.
  double s21 = 0.0, s12 = 0.0;
  const double c2[3] = {1.0, -2.0, 1.0};   // /h^2
  const double c1[3] = {-1.0, 0.0, 1.0};   // /(2h)
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      s21 += c2[i] * c1[j] * f[i + 1][j + 1];
      s12 += c1[i] * c2[j] * f[i + 1][j + 1];
    }
  out[deriv_slot(2, 1)] = s21 / (2.0 * h * h * h);
  out[deriv_slot(1, 2)] = s12 / (2.0 * h * h * h);
  return out;
}

}  // namespace detail

// Derivative samples of a scalar field at every grid node.  The field must
// be evaluable on the padded disk of radius 1 + 2*sqrt(2)*derivative_step.
inline std::vector<DerivSet> fd_derivatives(const ScalarField& field,
                                            const DiskGrid& grid, int order) {
  if (order < 0 || order > 3)
    throw ValidationError("fd_derivatives: order must be in [0, 3]");
  std::vector<DerivSet> out;
  const int n = grid.node_count();
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    const Vec2 y = grid.node(k);
    try {
      out.push_back(
          detail::stencil_derivatives(field, y, grid.derivative_step, order));
    } catch (const Error& e) {
      throw NumericError("field evaluation failed near (" +
                         std::to_string(y.x) + ", " + std::to_string(y.y) +
                         "): " + e.what());
    }
  }
  return out;
}

// Sum over all multi-indices |alpha| <= 3 of the disk integral of the
// squared partial derivative (the square of the order-3 Sobolev norm).
inline double sobolev3_sq(const ScalarField& field, const DiskGrid& grid) {
  const std::vector<DerivSet> d = fd_derivatives(field, grid, 3);
  double s = 0.0;
  const int n = grid.node_count();
  for (int k = 0; k < n; ++k) {
    double node_sum = 0.0;
    for (int a = 0; a < 10; ++a) node_sum += d[k][a] * d[k][a];
    s += grid.weight(k) * node_sum;
  }
  return s;
}

// Same norm square for a field supported inside B(scale): substitute
// y = scale*u so the grid resolves the support, and weight each derivative
// order by scale^(2-2|alpha|).  Equals the B(1) integral whenever the field
// vanishes outside B(scale / (1 + 2*sqrt(2)*h)) or so; callers guarantee a
// comfortable margin.
inline double sobolev3_sq_scaled(const ScalarField& field, double scale,
                                 const DiskGrid& grid) {
  if (!(scale > 0.0))
    throw ValidationError("sobolev3_sq_scaled: scale must be positive");
  const ScalarField shrunk = [&field, scale](const Vec2& u) {
    return field(Vec2{scale * u.x, scale * u.y});
  };
  const std::vector<DerivSet> d = fd_derivatives(shrunk, grid, 3);
  double order_w[4];
  for (int o = 0; o <= 3; ++o) order_w[o] = std::pow(scale, 2.0 - 2.0 * o);
  double s = 0.0;
  const int n = grid.node_count();
  for (int k = 0; k < n; ++k) {
    double node_sum = 0.0;
    for (int ax = 0; ax <= 3; ++ax)
      for (int ay = 0; ay + ax <= 3; ++ay) {
        const double dv = d[k][deriv_slot(ax, ay)];
        node_sum += order_w[ax + ay] * dv * dv;
      }
    s += grid.weight(k) * node_sum;
  }
  return s;
}

}  // namespace spheredr
