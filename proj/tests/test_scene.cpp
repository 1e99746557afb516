#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <oamrc/numerics.hpp>
#include <oamrc/scene.hpp>

#include <cmath>
#include <numbers>

using namespace oamrc;
using std::numbers::pi;

namespace {

TargetState make_target(double r0, double theta0_deg, double phi0_deg,
                        double spin, double half_angle_deg) {
  TargetState t;
  t.range0 = r0;
  t.elev0 = theta0_deg * pi / 180.0;
  t.azim0 = phi0_deg * pi / 180.0;
  t.spin = spin;
  t.half_angle = half_angle_deg * pi / 180.0;
  return t;
}

ScattererState off_axis(double gamma, double psi0, ScattererRole role = ScattererRole::kVertex) {
  ScattererState s;
  s.role = role;
  s.radial_offset = gamma;
  s.phase0 = psi0;
  return s;
}

// Unwrapped azimuth of a scatterer, for finite differencing.
double azimuth_near(const TargetState& t, const ScattererState& s, double time,
                    double ref) {
  double phi = to_spherical(scatterer_position(t, s, time)).phi;
  while (phi - ref > pi) phi -= 2 * pi;
  while (phi - ref < -pi) phi += 2 * pi;
  return phi;
}

}  // namespace

TEST_CASE("rotation_matrix is the x-then-z attitude rotation") {
  // Identity at zero angles.
  CHECK((rotation_matrix(0, 0) - Eigen::Matrix3d::Identity()).norm() <= 1e-15);

  std::mt19937_64 rng = make_rng(31u, 0, 0, 0);
  for (int i = 0; i < 50; ++i) {
    const double th = pi * uniform01(rng), ph = 2 * pi * uniform01(rng);
    const Eigen::Matrix3d r = rotation_matrix(th, ph);
    // Against an independently composed rotation.
    const Eigen::Matrix3d ref =
        (Eigen::AngleAxisd(th, Eigen::Vector3d::UnitX()) *
         Eigen::AngleAxisd(ph, Eigen::Vector3d::UnitZ()))
            .toRotationMatrix();
    CHECK((r - ref).norm() <= 1e-12);
    CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).norm() <= 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Spot entries of the composed form.
  const double th = 0.3, ph = 1.1;
  const Eigen::Matrix3d r = rotation_matrix(th, ph);
  CHECK(r(0, 0) == doctest::Approx(std::cos(ph)));
  CHECK(r(0, 1) == doctest::Approx(-std::sin(ph)));
  CHECK(r(0, 2) == doctest::Approx(0.0).scale(1.0));
  CHECK(r(1, 0) == doctest::Approx(std::cos(th) * std::sin(ph)));
  CHECK(r(1, 1) == doctest::Approx(std::cos(th) * std::cos(ph)));
  CHECK(r(1, 2) == doctest::Approx(-std::sin(th)));
  CHECK(r(2, 0) == doctest::Approx(std::sin(th) * std::sin(ph)));
  CHECK(r(2, 1) == doctest::Approx(std::sin(th) * std::cos(ph)));
  CHECK(r(2, 2) == doctest::Approx(std::cos(th)));
}

TEST_CASE("radial_unit and to_spherical invert each other") {
  std::mt19937_64 rng = make_rng(32u, 0, 0, 0);
  for (int i = 0; i < 100; ++i) {
    const double r = 1.0 + 200.0 * uniform01(rng);
    const double th = 0.05 + 0.9 * pi * uniform01(rng);
    const double ph = 2 * pi * uniform01(rng);
    const Spherical s = to_spherical(r * radial_unit(th, ph));
    CHECK(s.r == doctest::Approx(r).epsilon(1e-12));
    CHECK(s.theta == doctest::Approx(th).epsilon(1e-10));
    CHECK(s.phi == doctest::Approx(ph).epsilon(1e-10).scale(1e-10));
    CHECK(s.phi >= 0.0);
    CHECK(s.phi < 2 * pi);
  }
}

TEST_CASE("spherical_basis is right-handed and orthonormal") {
  const double th = 1.0, ph = 2.2;
  const Eigen::Matrix3d b = spherical_basis(th, ph);
  CHECK((b * b.transpose() - Eigen::Matrix3d::Identity()).norm() <= 1e-13);
  CHECK((b.col(0) - radial_unit(th, ph)).norm() <= 1e-14);
  // r_hat x theta_hat = phi_hat.
  CHECK((b.col(0).cross(b.col(1)) - b.col(2)).norm() <= 1e-13);
}

TEST_CASE("centroid follows its straight track") {
  TargetState t = make_target(82.5, 20, 70, 8 * pi, 30);
  ScattererState c;  // centroid
  const Eigen::Vector3d p0 = scatterer_position(t, c, 0.0);
  CHECK((p0 - 82.5 * radial_unit(t.elev0, t.azim0)).norm() <= 1e-12);
  CHECK((scatterer_position(t, c, 3.7) - p0).norm() <= 1e-12);  // static target

  t.speed = 12.0;
  t.heading = 0.6;
  const Eigen::Vector3d q0 = scatterer_position(t, c, 0.0);
  const Eigen::Vector3d q1 = scatterer_position(t, c, 2.0);
  const Eigen::Vector3d step = (q1 - q0) / 2.0;
  CHECK(step.norm() == doctest::Approx(12.0).epsilon(1e-12));
  const double cos_angle = step.dot(radial_unit(t.elev0, t.azim0)) / step.norm();
  CHECK(cos_angle == doctest::Approx(std::cos(0.6)).epsilon(1e-12));
}

TEST_CASE("off-axis scatterers ride a circle about the line of sight") {
  const TargetState t = make_target(100, 35, 130, 6 * pi, 25);
  const ScattererState v = off_axis(2.5, 0.9);
  const Eigen::Vector3d rhat = radial_unit(t.elev0, t.azim0);
  const double axial = 2.5 / std::tan(t.half_angle);
  const Eigen::Vector3d center = (100.0 - axial) * rhat;

  const double period = 2 * pi / t.spin;
  for (const double time : {0.0, 0.043, 0.11, 0.27}) {
    const Eigen::Vector3d p = scatterer_position(t, v, time);
    CHECK((p - center).norm() == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(std::abs((p - center).dot(rhat)) <= 1e-12);  // circle plane _|_ LOS
    CHECK((scatterer_position(t, v, time + period) - p).norm() <= 1e-9);
    // Distance from the origin is constant: the axis passes through it.
    CHECK(p.norm() == doctest::Approx(std::hypot(100.0 - axial, 2.5)).epsilon(1e-12));
  }

  // Distinct circle phases give distinct positions at the same instant.
  const ScattererState b = off_axis(2.5, 0.9 + 1.5, ScattererRole::kBody);
  CHECK((scatterer_position(t, b, 0.1) - scatterer_position(t, v, 0.1)).norm() > 1.0);
}

TEST_CASE("off-axis scatterer with flat cone angle is rejected") {
  const TargetState t = make_target(100, 35, 130, 6 * pi, 0);
  CHECK_THROWS_AS(scatterer_position(t, off_axis(2.5, 0), 0.0),
                  std::invalid_argument);
}

TEST_CASE("linear_doppler closed form") {
  TargetState t;
  t.speed = 10.0;
  t.heading = pi / 3;
  CHECK(linear_doppler(t, 209.0) == doctest::Approx(166.3169).epsilon(1e-4));
  CHECK(linear_doppler(t, 209.0) ==
        doctest::Approx(209.0 * 10.0 * 0.5 / (2 * pi)).epsilon(1e-12));
  t.heading = pi / 2;  // crossing target: no radial rate
  CHECK(std::abs(linear_doppler(t, 209.0)) <= 1e-12);
}

TEST_CASE("doppler_phase_offset uses the two-argument arctangent") {
  TargetState t = make_target(100, 30, 90, 0, 30);
  CHECK(doppler_phase_offset(t) == doctest::Approx(0.0).scale(1.0));
  t.azim0 = 0.0;
  t.elev0 = pi / 2;
  CHECK(doppler_phase_offset(t) == doctest::Approx(pi / 2));
  t.azim0 = 270.0 * pi / 180.0;
  CHECK(std::abs(doppler_phase_offset(t)) == doctest::Approx(pi));
}

TEST_CASE("doppler_gain is negative and scales with the circle radius") {
  const TargetState t = make_target(100, 40, 55, 4 * pi, 30);
  const double g1 = doppler_gain(t, off_axis(0.5, 0));
  const double g2 = doppler_gain(t, off_axis(1.0, 0));
  CHECK(g1 < 0.0);
  CHECK(g2 < g1);
  CHECK(doppler_gain(t, ScattererState{}) == 0.0);  // on-axis: no modulation
}

TEST_CASE("rotational_doppler frozen value and mode scaling") {
  // Hand-evaluated case: theta0=30deg, phi0=90deg, gamma=0.5, alpha=45deg,
  // r0=100, spin=2pi, psi0=0, mode=3, t=0.1.  Offset delta = 0 there, so
  // f = 3 * g * cos(0.2*pi) with g = -0.5 / (99.5 * 0.5).
  const TargetState t = make_target(100, 30, 90, 2 * pi, 45);
  const ScattererState v = off_axis(0.5, 0.0);
  CHECK(rotational_doppler(t, v, 3, 0.1) ==
        doctest::Approx(-0.0243925).epsilon(1e-4));

  // Linear in the mode index at fixed time.
  const double f1 = rotational_doppler(t, v, 1, 0.07);
  for (int mode = -8; mode <= 7; ++mode)
    CHECK(rotational_doppler(t, v, mode, 0.07) ==
          doctest::Approx(mode * f1).scale(1e-12));

  // Mode 0 and on-axis scatterers show no spin modulation.
  CHECK(rotational_doppler(t, v, 0, 0.2) == 0.0);
  CHECK(rotational_doppler(t, ScattererState{}, 5, 0.2) == 0.0);
}

TEST_CASE("rotational_doppler matches finite-difference azimuth rates") {
  // On the phi0 = +-90 deg viewing meridian the closed form's direction
  // factor is exactly 1, so it agrees with the numerically differentiated
  // azimuth of the actual track up to harmonic distortion of relative size
  // swing * cos(theta0), swing = gamma / ((r0 - axial) sin(theta0)).  The
  // sweep keeps that product below 0.4%, leaving 2.5x margin on the 1% gate.
  for (const double phi0_deg : {90.0, 270.0}) {
    for (const auto [theta0_deg, gamma] :
         {std::pair{20.0, 0.1}, {45.0, 0.1}, {45.0, 0.3}, {60.0, 0.3}, {85.0, 0.3}}) {
      for (const double r0 : {80.0, 150.0}) {
        for (const double psi0 : {0.0, 1.3}) {
          TargetState t = make_target(r0, theta0_deg, phi0_deg, 4 * pi, 30);
          ScattererState s = off_axis(gamma, psi0);
          const int mode = 5;
          for (const double time : {0.0, 0.05, 0.13}) {
            const double h = 1e-6;
            const double ref = to_spherical(scatterer_position(t, s, time)).phi;
            const double fd = (azimuth_near(t, s, time + h, ref) -
                               azimuth_near(t, s, time - h, ref)) /
                              (2 * h);
            const double fd_hz = mode * fd / (2 * pi);
            const double closed = rotational_doppler(t, s, mode, time);
            const double scale =
                std::abs(mode * doppler_gain(t, s) * t.spin / (2 * pi));
            CHECK(std::abs(closed - fd_hz) <= 0.01 * scale + 1e-9);
          }
        }
      }
    }
  }
}
