#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "spheredr/quadrature.hpp"

using namespace spheredr;

TEST_CASE("disk grid integrates constants exactly") {
  const DiskGrid grid;
  CHECK(std::abs(disk_integrate([](const Vec2&) { return 1.0; }, grid) - kPi) <
        1e-10);
  for (double r : grid.radii) {
    CHECK(r > 0.0);
    CHECK(r < 1.0);
  }
  for (double w : grid.radial_weights) CHECK(w > 0.0);
  for (double w : grid.angular_weights) CHECK(w > 0.0);
}

TEST_CASE("disk grid matches polar closed forms") {
  const DiskGrid grid;
  // Integrals over the unit disk: x^2 -> pi/4, x^2 y^2 -> pi/24,
  // |y|^2 -> pi/2, x^4 -> pi/8.
  CHECK(std::abs(disk_integrate([](const Vec2& y) { return y.x * y.x; }, grid) -
                 kPi / 4.0) < 1e-12);
  CHECK(std::abs(disk_integrate(
                     [](const Vec2& y) { return y.x * y.x * y.y * y.y; }, grid) -
                 kPi / 24.0) < 1e-12);
  CHECK(std::abs(disk_integrate([](const Vec2& y) { return y.norm2(); }, grid) -
                 kPi / 2.0) < 1e-12);
  CHECK(std::abs(
            disk_integrate([](const Vec2& y) { return std::pow(y.x, 4); }, grid) -
            kPi / 8.0) < 1e-12);
}

TEST_CASE("finite differences are exact on low-degree polynomials") {
  const DiskGrid grid(12, 16, 1e-2);
  const auto lin = fd_derivatives([](const Vec2& y) { return y.x; }, grid, 3);
  for (const DerivSet& d : lin) {
    CHECK(std::abs(d[deriv_slot(1, 0)] - 1.0) < 1e-8);
    CHECK(std::abs(d[deriv_slot(0, 1)]) < 1e-8);
  }
  const auto con = fd_derivatives([](const Vec2&) { return 4.25; }, grid, 3);
  for (const DerivSet& d : con) {
    CHECK(d[deriv_slot(0, 0)] == 4.25);
    for (int a = 1; a < 10; ++a) CHECK(std::abs(d[a]) < 1e-10);
  }
  // u = x^2 y: d(2,1) = 2, d(1,1) = 2x, d(3,0) = 0.
  const auto mono =
      fd_derivatives([](const Vec2& y) { return y.x * y.x * y.y; }, grid, 3);
  for (int k = 0; k < grid.node_count(); ++k) {
    const Vec2 y = grid.node(k);
    CHECK(std::abs(mono[k][deriv_slot(2, 1)] - 2.0) < 1e-5);
    CHECK(std::abs(mono[k][deriv_slot(1, 1)] - 2.0 * y.x) < 1e-8);
    CHECK(std::abs(mono[k][deriv_slot(3, 0)]) < 1e-5);
  }
}

TEST_CASE("finite differences converge at the designed order") {
  auto u = [](const Vec2& y) { return std::sin(y.x) * std::cos(y.y); };
  auto exact = [](int ax, int ay, const Vec2& y) {
    const double sx = std::sin(y.x), cx = std::cos(y.x);
    const double sy = std::sin(y.y), cy = std::cos(y.y);
    const double fx[4] = {sx, cx, -sx, -cx};  // d^k/dx^k sin
    const double fy[4] = {cy, -sy, -cy, sy};  // d^k/dy^k cos
    return fx[ax] * fy[ay];
  };
  const DiskGrid coarse(10, 12, 1e-2), fine(10, 12, 5e-3);
  const auto dc = fd_derivatives(u, coarse, 3);
  const auto df = fd_derivatives(u, fine, 3);
  for (int ax = 0; ax <= 2; ++ax)
    for (int ay = 0; ay + ax <= 2; ++ay) {
      if (ax + ay == 0) continue;
      double ec = 0.0, ef = 0.0;
      for (int k = 0; k < coarse.node_count(); ++k) {
        const Vec2 y = coarse.node(k);
        ec = std::max(ec, std::abs(dc[k][deriv_slot(ax, ay)] - exact(ax, ay, y)));
        ef = std::max(ef, std::abs(df[k][deriv_slot(ax, ay)] - exact(ax, ay, y)));
      }
      CHECK(ef * 3.0 <= ec);
    }
}

TEST_CASE("sobolev square sum matches analytic disk integrals") {
  const DiskGrid grid;
  const double c = sobolev3_sq([](const Vec2&) { return 1.0; }, grid);
  CHECK(std::abs(c - kPi) < 1e-6);
  const double lin = sobolev3_sq([](const Vec2& y) { return y.x; }, grid);
  CHECK(std::abs(lin - (kPi / 4.0 + kPi)) < 1e-5);
  const double bil = sobolev3_sq([](const Vec2& y) { return y.x * y.y; }, grid);
  CHECK(std::abs(bil - (kPi / 24.0 + kPi / 4.0 + kPi / 4.0 + kPi)) < 1e-5);
}

TEST_CASE("field evaluation failures carry the offending point") {
  const DiskGrid grid(6, 8, 1e-2);
  auto bad = [](const Vec2& y) -> double {
    if (y.x > 0.5) throw DomainError("synthetic failure");
    return y.x;
  };
  CHECK_THROWS_AS(fd_derivatives(bad, grid, 1), NumericError);
  try {
    fd_derivatives(bad, grid, 1);
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("synthetic failure") != std::string::npos);
    CHECK(msg.find("(") != std::string::npos);
  }
}

TEST_CASE("derivative slots are a bijection") {
  bool seen[10] = {};
  for (int ax = 0; ax <= 3; ++ax)
    for (int ay = 0; ay + ax <= 3; ++ay) {
      const int s = deriv_slot(ax, ay);
      CHECK(s >= 0);
      CHECK(s < 10);
      CHECK(!seen[s]);
      seen[s] = true;
    }
  CHECK_THROWS_AS(deriv_slot(4, 0), ValidationError);
}
