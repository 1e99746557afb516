#include "oamrc/scene.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace oamrc {

using std::numbers::pi;

Eigen::Vector3d radial_unit(double theta, double phi) {
  const double st = std::sin(theta);
  return {st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
}

Eigen::Matrix3d spherical_basis(double theta, double phi) {
  const double st = std::sin(theta), ct = std::cos(theta);
  const double sp = std::sin(phi), cp = std::cos(phi);
  Eigen::Matrix3d b;
  b.col(0) << st * cp, st * sp, ct;        // r_hat
  b.col(1) << ct * cp, ct * sp, -st;       // theta_hat
  b.col(2) << -sp, cp, 0.0;                // phi_hat
  return b;
}

Eigen::Matrix3d rotation_matrix(double theta0, double phi0) {
  const double st = std::sin(theta0), ct = std::cos(theta0);
  const double sp = std::sin(phi0), cp = std::cos(phi0);
  Eigen::Matrix3d r;
  r << cp, -sp, 0.0,
       ct * sp, ct * cp, -st,
       st * sp, st * cp, ct;
  return r;
}

Spherical to_spherical(const Eigen::Vector3d& p) {
  Spherical s;
  s.r = p.norm();
  if (s.r == 0.0) return s;
  s.theta = std::acos(std::clamp(p.z() / s.r, -1.0, 1.0));
  s.phi = std::atan2(p.y(), p.x());
  if (s.phi < 0.0) s.phi += 2.0 * pi;
  return s;
}

namespace {

Eigen::Vector3d centroid_position(const TargetState& t, double time) {
  const Eigen::Matrix3d basis = spherical_basis(t.elev0, t.azim0);
  const Eigen::Vector3d track_dir =
      std::cos(t.heading) * basis.col(0) + std::sin(t.heading) * basis.col(1);
  return t.range0 * basis.col(0) + t.speed * time * track_dir;
}

}  // namespace

Eigen::Vector3d scatterer_position(const TargetState& t,
                                   const ScattererState& sc, double time) {
  const Eigen::Vector3d c = centroid_position(t, time);
  if (sc.role == ScattererRole::kCentroid || sc.radial_offset == 0.0) return c;
  if (t.half_angle <= 0.0 || t.half_angle >= pi / 2)
    throw std::invalid_argument(
        "scatterer_position: off-axis scatterer needs a cone half-angle in (0, pi/2)");

  const Eigen::Matrix3d basis = spherical_basis(t.elev0, t.azim0);
  // In-plane circle basis, phased so the azimuth modulation of the track
  // reproduces the closed-form Doppler law's phase offset.
  const double chi = doppler_phase_offset(t) + pi;
  const Eigen::Vector3d e1 =
      std::cos(chi) * basis.col(1) + std::sin(chi) * basis.col(2);
  const Eigen::Vector3d e2 =
      -std::sin(chi) * basis.col(1) + std::cos(chi) * basis.col(2);

  const double axial = sc.radial_offset / std::tan(t.half_angle);
  const double beta = t.spin * time + sc.phase0;
  return c - axial * basis.col(0) +
         sc.radial_offset * (std::cos(beta) * e1 + std::sin(beta) * e2);
}

double linear_doppler(const TargetState& t, double wavenumber) {
  return wavenumber * t.speed * std::cos(t.heading) / (2.0 * pi);
}

double doppler_phase_offset(const TargetState& t) {
  return std::atan2(std::cos(t.azim0) * std::sin(t.elev0), std::sin(t.azim0));
}

double doppler_gain(const TargetState& t, const ScattererState& sc) {
  if (sc.role == ScattererRole::kCentroid || sc.radial_offset == 0.0) return 0.0;
  const double st = std::sin(t.elev0);
  if (st == 0.0)
    throw std::invalid_argument("doppler_gain: target on the array axis");
  const double direction =
      std::sqrt(std::pow(std::sin(t.azim0), 2) +
                std::pow(std::cos(t.azim0) * std::sin(t.elev0), 2));
  const double axial = sc.radial_offset / std::tan(t.half_angle);
  return -sc.radial_offset * direction / ((t.range0 - axial) * st);
}

double rotational_doppler(const TargetState& t, const ScattererState& sc,
                          int mode, double time) {
  if (mode == 0 || sc.role == ScattererRole::kCentroid || sc.radial_offset == 0.0)
    return 0.0;
  const double g = doppler_gain(t, sc);
  const double delta = doppler_phase_offset(t);
  return mode / (2.0 * pi) * g * t.spin *
         std::cos(t.spin * time + sc.phase0 + delta);
}

}  // namespace oamrc
