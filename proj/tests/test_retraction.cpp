#include "spheredr/retraction.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "corpus.hpp"
#include "spheredr/sphere.hpp"

using namespace spheredr;

namespace {

// Chart derivative of a sphere map g at x, read in the chart moved by rot:
// finite differences of w -> chart(rot·g(rot^T·chart^{-1}(w))) at w0.
Mat2 moved_chart_jacobian(const std::function<Vec3(const Vec3&)>& g,
                          const Rotation& rot, const Vec2& w0, double h) {
  const auto in_chart = [&](const Vec2& w) {
    const Vec3 x = sphere_normalize(rot.matrix().transpose() *
                                    stereo_north_inv(w));
    return stereo_north(rot.matrix() * g(x));
  };
  Mat2 J;
  for (int k = 0; k < 2; ++k) {
    const Vec2 dw = k == 0 ? Vec2{h, 0.0} : Vec2{0.0, h};
    const Vec2 d = (in_chart(w0 + dw) - in_chart(w0 - dw)) * (0.5 / h);
    J(0, k) = d.x;
    J(1, k) = d.y;
  }
  return J;
}

DiffeoChain one(PrimitivePtr p) {
  return DiffeoChain(Domain::sphere, {std::move(p)});
}

}  // namespace

TEST_CASE("frame data of the identity and of rotations") {
  const QData qid = q_data(DiffeoChain(Domain::sphere));
  CHECK((qid.alpha.matrix() - Mat3::identity()).max_abs() < 1e-12);
  CHECK((qid.frame - Mat2::identity()).frobenius() < 1e-12);
  CHECK((qid.g1 - Mat2::identity()).frobenius() < 1e-12);

  for (const auto& mem : corpus::all_members()) {
    if (mem.name != "rot1" && mem.name != "rot2" && mem.name != "rot3")
      continue;
    const QData qd = q_data(mem.chain);
    const Mat3 a = mem.chain.tangent(kBasePoint);
    CHECK((qd.alpha.matrix() - a.transpose()).max_abs() < 1e-12);
    CHECK((qd.g1 - Mat2::identity()).frobenius() < 1e-12);
  }
}

TEST_CASE("frame data of the doubling map") {
  const QData qd = q_data(one(corpus::mobius2()));
  CHECK((qd.fx0 - kBasePoint).norm() < 1e-14);
  CHECK(qd.frame(0, 0) == Catch::Approx(2.0).margin(1e-12));
  CHECK(qd.frame(0, 1) == Catch::Approx(0.0).margin(1e-12));
  CHECK(qd.frame(1, 1) == Catch::Approx(2.0).margin(1e-12));
  CHECK((qd.alpha.matrix() - Mat3::identity()).max_abs() < 1e-12);
  CHECK(qd.g1(0, 0) == Catch::Approx(0.5).margin(1e-12));
  CHECK(qd.g1(1, 1) == Catch::Approx(0.5).margin(1e-12));
  CHECK(std::abs(qd.g1(0, 1)) + std::abs(qd.g1(1, 0)) < 1e-12);
}

TEST_CASE("flow stage is skipped when nothing needs to move") {
  const QData qid = q_data(DiffeoChain(Domain::sphere));
  CHECK(q_psi(qid, 0.7) == nullptr);

  // Rotations have an orthonormal frame: the chain passes through untouched
  // and the stage output is bit-exact.
  const DiffeoChain rot = one(corpus::rot2());
  const QData qd = q_data(rot);
  for (double t : {0.0, 0.3, 0.7, 1.0}) {
    const DiffeoChain q = stage_q(rot, qd, t);
    CHECK(q.size() == rot.size());
    for (const Vec3& x : corpus::sphere_samples(40))
      CHECK((q.apply(x) - rot.apply(x)).norm() == 0.0);
  }

  // Any chain at t = 0 is returned unchanged.
  const DiffeoChain m = one(corpus::mobius2());
  CHECK(stage_q(m, q_data(m), 0.0).size() == m.size());
}

TEST_CASE("planar frame flow: linear zone, support, inverse") {
  const Mat2 g1{0.5, -0.1, 0.0, 0.7};
  const QFlowMap qf(g1, 1.0);

  // Both endpoints inside the unit disk: exact linear transport.
  const Vec2 z{0.4, -0.3};
  CHECK(((qf.apply(z)) - g1 * z).norm() == 0.0);
  CHECK((qf.jacobian(z) - g1).frobenius() == 0.0);
  CHECK((qf.invert(g1 * z) - z).norm() < 1e-12);

  // Outside radius 2 the map is the identity bit-exactly.
  const Vec2 far{2.5, 0.1};
  CHECK((qf.apply(far) - far).norm() == 0.0);
  CHECK((qf.jacobian(far) - Mat2::identity()).frobenius() == 0.0);

  // Transition region: integrated, still invertible and smooth.
  const Vec2 mid{1.3, 0.4};
  const Vec2 w = qf.apply(mid);
  CHECK((qf.invert(w) - mid).norm() < 1e-9);
  const Mat2 J = qf.jacobian(mid);
  Mat2 Jfd;
  const double h = 1e-6;
  for (int k = 0; k < 2; ++k) {
    const Vec2 dz = k == 0 ? Vec2{h, 0.0} : Vec2{0.0, h};
    const Vec2 d = (qf.apply(mid + dz) - qf.apply(mid - dz)) * (0.5 / h);
    Jfd(0, k) = d.x;
    Jfd(1, k) = d.y;
  }
  CHECK((J - Jfd).frobenius() < 1e-6);

  // Intermediate stage time agrees with the interpolated matrix inside.
  const QFlowMap qh(g1, 0.4);
  const Mat2 g04 = 0.6 * Mat2::identity() + 0.4 * g1;
  CHECK(((qh.apply(z)) - g04 * z).norm() == 0.0);
}

TEST_CASE("flow stage linearizes the chart derivative") {
  // At t = 1 the chart Jacobian of the stage primitive at f(x0), read in the
  // alpha-moved chart, equals g1.
  for (const auto& mem : corpus::all_members()) {
    if (mem.name != "mobius2" && mem.name != "lox" && mem.name != "comp1")
      continue;
    const QData qd = q_data(mem.chain);
    const PrimitivePtr psi = q_psi(qd, 1.0);
    REQUIRE(psi != nullptr);
    const auto g = [&](const Vec3& x) { return psi->apply(x); };
    const Vec2 w0 = stereo_north(qd.alpha.matrix() * qd.fx0);
    const Mat2 Jfd = moved_chart_jacobian(g, qd.alpha, w0, 1e-5);
    CHECK((Jfd - qd.g1).frobenius() < 1e-5);
  }
}

TEST_CASE("flow stage at t = 0 through the charts is numerically exact") {
  const DiffeoChain m = one(corpus::lox());
  const QData qd = q_data(m);
  // q_psi(qd, 0) is skipped, so emulate the degenerate primitive directly:
  // the conjugated zero-time flow must stay within chart roundoff.
  std::vector<PrimitivePtr> inner;
  inner.push_back(std::make_shared<QFlowMap>(qd.g1, 0.0));
  PrimitivePtr psi =
      std::make_shared<ChartConjugation>(Chart::north, inner, qd.alpha);
  for (const Vec3& x : corpus::sphere_samples(60))
    CHECK((psi->apply(x) - x).norm() < 1e-12);
}

TEST_CASE("normalized chain fixes the base point with identity frame") {
  for (const auto& mem : corpus::all_members()) {
    const QData qd = q_data(mem.chain);
    const DiffeoChain f1 = normalized_chain(mem.chain, qd);
    const auto [y0, J] = f1.apply_with_tangent(kBasePoint);
    CHECK((y0 - kBasePoint).norm() < 1e-10);
    const Mat2 frame = moved_chart_jacobian(
        [&](const Vec3& x) { return f1.apply(x); }, Rotation::identity(),
        Vec2{0.0, 0.0}, 1e-5);
    CHECK((frame - Mat2::identity()).frobenius() < 1e-7);
  }
}

TEST_CASE("derivative of the completed flow stage is orthonormal") {
  for (const auto& mem : corpus::all_members()) {
    const QData qd = q_data(mem.chain);
    const DiffeoChain q1 = stage_q(mem.chain, qd, 1.0);
    const auto [y0, J] = q1.apply_with_tangent(kBasePoint);
    const Vec3 a = J * kE1;
    const Vec3 b = J * kE2;
    CHECK(std::abs(a.norm2() - 1.0) < 1e-6);
    CHECK(std::abs(b.norm2() - 1.0) < 1e-6);
    CHECK(std::abs(dot(a, b)) < 1e-6);
  }
}

TEST_CASE("flow stage commutes with rotations") {
  const Rotation A = Rotation::about(Vec3{0.3, -1.0, 0.2}, 1.1);
  for (const auto& mem : corpus::all_members()) {
    if (mem.name != "mobius2" && mem.name != "rotor_north") continue;
    DiffeoChain af = mem.chain;
    af.push_back(std::make_shared<RotationMap>(A));

    for (double t : {0.4, 1.0}) {
      const DiffeoChain lhs = stage_q(af, q_data(af), t);
      DiffeoChain rhs = stage_q(mem.chain, q_data(mem.chain), t);
      rhs.push_back(std::make_shared<RotationMap>(A));
      double worst = 0.0;
      for (const Vec3& x : corpus::sphere_samples(32 * 32))
        worst = std::max(worst, (lhs.apply(x) - rhs.apply(x)).norm());
      CHECK(worst < 1e-8);
    }
  }
}

TEST_CASE("frame consistency survives the flow stage") {
  for (const auto& mem : corpus::all_members()) {
    if (mem.name != "mobius2" && mem.name != "comp2") continue;
    const QData qd = q_data(mem.chain);
    const DiffeoChain q1 = stage_q(mem.chain, qd, 1.0);
    const QData qd1 = q_data(q1);
    CHECK((qd1.alpha.matrix() - qd.alpha.matrix()).max_abs() < 1e-6);
  }
}

TEST_CASE("stage times outside the clock are rejected") {
  CHECK_THROWS_AS(QFlowMap(Mat2{0.5, 0.0, 0.0, 0.5}, 1.5), ValidationError);
  CHECK_THROWS_AS(QFlowMap(Mat2{-0.5, 0.0, 0.0, 0.5}, 0.5), ValidationError);
}

TEST_CASE("patch report for the identity") {
  const DiffeoChain id(Domain::sphere);
  const EpsilonReport rep = epsilon(id);
  CHECK(rep.eps1 > 0.0);
  CHECK(rep.eps > 0.0);
  CHECK(rep.eps <= 0.5 * rep.eps1);
  // Height field of the inverse chart: H3 norm square is finite and O(10).
  CHECK(rep.sob_height > 1.0);
  CHECK(rep.sob_height < 100.0);
  // For the identity the gauge density is the constant 1/8 under the cutoff.
  CHECK(rep.sob_gauge > 0.0);
}

TEST_CASE("patch report accepts every normalized corpus member") {
  for (const auto& mem : corpus::all_members()) {
    const QData qd = q_data(mem.chain);
    const DiffeoChain f1 = normalized_chain(mem.chain, qd);
    const EpsilonReport rep = epsilon(f1);
    INFO(mem.name);
    CHECK(rep.eps > 0.0);
    CHECK(rep.eps <= 0.5 * rep.eps1);
    // Guarantee margins are re-verified inside epsilon(); arriving here
    // means both held on 256 sample points.
  }
}

TEST_CASE("patch report rejects maps outside the normalized family") {
  // A plain rotation does not fix the base point.
  CHECK_THROWS_AS(epsilon(one(corpus::rot1())), ValidationError);
  // The doubling map fixes it but has derivative 2I there.
  CHECK_THROWS_AS(epsilon(one(corpus::mobius2())), ValidationError);
}

TEST_CASE("flatten blend endpoints and seams") {
  for (const auto& mem : corpus::all_members()) {
    if (mem.name != "mobius2" && mem.name != "rotor_north" &&
        mem.name != "comp1")
      continue;
    INFO(mem.name);
    const QData qd = q_data(mem.chain);
    const DiffeoChain f1 = normalized_chain(mem.chain, qd);
    const EpsilonReport rep = epsilon(f1);

    // Stage time zero returns the chain untouched.
    CHECK(stage_s(f1, rep.eps, 0.0).size() == f1.size());

    const DiffeoChain s1 = stage_s(f1, rep.eps, 1.0);
    const DiffeoChain sh = stage_s(f1, rep.eps, 0.5);

    // At t = 1 the map is the identity on the inner half-ball.
    for (const Vec2& y : detail::ring_samples(0.49 * rep.eps, 6, 10)) {
      const Vec3 x = stereo_north_inv(y);
      CHECK((s1.apply(x) - x).norm() < 1e-10);
    }
    // Outside the chart ball the blend leaves f1 alone (same chain values).
    for (const Vec2& y : detail::ring_samples(4.0 * rep.eps, 4, 8)) {
      if (y.norm() < 2.0 * rep.eps) continue;
      const Vec3 x = stereo_north_inv(y);
      CHECK((sh.apply(x) - f1.apply(x)).norm() < 1e-11);
    }
    // Far from the patch entirely: bit-exact passthrough of f1.
    const Vec3 far{0.1, -0.2, 0.97};
    CHECK((sh.apply(sphere_normalize(far)) -
           f1.apply(sphere_normalize(far))).norm() == 0.0);

    // Blend Jacobian matches finite differences of the chart map.
    for (const Vec2& y : detail::ring_samples(0.8 * rep.eps, 3, 4)) {
      const auto sbar = [&](const Vec2& yy) {
        return stereo_north(sh.apply(stereo_north_inv(yy)));
      };
      const double h = 1e-7 * rep.eps;
      Mat2 jfd;
      for (int k = 0; k < 2; ++k) {
        const Vec2 dy = k == 0 ? Vec2{h, 0.0} : Vec2{0.0, h};
        const Vec2 d = (sbar(y + dy) - sbar(y - dy)) * (0.5 / h);
        jfd(0, k) = d.x;
        jfd(1, k) = d.y;
      }
      const Mat2 dfb = detail::chart_map_jacobian(f1, y);
      const double g = gamma_flatten(rep.eps, y);
      const Vec2 gg = gamma_flatten_grad(rep.eps, y);
      const Mat2 jan = dfb + 0.5 * g * (Mat2::identity() - dfb) +
                       0.5 * outer(y - detail::chart_map(f1, y), gg);
      CHECK((jfd - jan).frobenius() < 1e-4 * jan.frobenius() + 1e-6);
    }

    // Round trip through the stage chain inversion.
    for (const Vec2& y : detail::ring_samples(0.9 * rep.eps, 3, 4)) {
      const Vec3 x = stereo_north_inv(y);
      const Vec3 fx = sh.apply(x);
      CHECK((sh.invert(fx) - x).norm() < 1e-9);
    }
  }
}

TEST_CASE("flatten blend of the identity is the identity") {
  const DiffeoChain id(Domain::sphere);
  const EpsilonReport rep = epsilon(id);
  const DiffeoChain s = stage_s(id, rep.eps, 0.7);
  for (const Vec3& x : corpus::sphere_samples(100))
    CHECK((s.apply(x) - x).norm() < 1e-12);
}
