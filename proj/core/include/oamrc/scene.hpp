#pragma once

// Scene description: spinning rigid targets observed from the array origin.
// Each target is a small cluster of point scatterers — a centroid on the
// target's reference track plus off-axis points (cone apex, body) that ride
// circles about the spin axis.  The spin axis runs through the centroid along
// the initial line of sight, and each off-axis scatterer's circle sits a
// fixed axial distance ahead of the centroid set by the cone half-angle.
// Closed-form Doppler laws for translation and spin live here too.

#include <vector>

#include <Eigen/Dense>

namespace oamrc {

enum class ScattererRole { kCentroid, kVertex, kBody };

/// One point scatterer riding the target's rigid motion.
struct ScattererState {
  ScattererRole role = ScattererRole::kCentroid;
  double radial_offset = 0.0;  ///< distance from the spin axis, m (0 for centroid)
  double phase0 = 0.0;         ///< initial angle on the spin circle, rad
  double rcs_mean = 1.0;       ///< mean scattering amplitude (linear)
};

/// A rigid target: centroid track plus attached scatterers.
struct TargetState {
  double range0 = 100.0;   ///< centroid range at t = 0, m
  double elev0 = 0.5;      ///< centroid elevation from the array axis, rad
  double azim0 = 0.0;      ///< centroid azimuth, rad
  double spin = 0.0;       ///< rotation rate about the axis, rad/s
  double half_angle = 0.7; ///< cone half-angle, rad; sets the axial offset
  double speed = 0.0;      ///< translation speed, m/s
  double heading = 0.0;    ///< angle between velocity and the line of sight, rad
  std::vector<ScattererState> scatterers;
};

/// Spherical coordinates: radial distance, polar angle from +z, azimuth in
/// [0, 2*pi).
struct Spherical {
  double r = 0.0;
  double theta = 0.0;
  double phi = 0.0;
};

/// Unit vector toward (theta, phi).
Eigen::Vector3d radial_unit(double theta, double phi);

/// Local spherical basis at (theta, phi): columns {r_hat, theta_hat, phi_hat}.
Eigen::Matrix3d spherical_basis(double theta, double phi);

/// Attitude transform for a target seen at (theta0, phi0): the x-rotation by
/// theta0 composed with the z-rotation by phi0.  Orthonormal, determinant +1;
/// identity when both angles vanish.
Eigen::Matrix3d rotation_matrix(double theta0, double phi0);

Spherical to_spherical(const Eigen::Vector3d& p);

/// World position of a scatterer at time t.  The centroid advances along its
/// straight track; off-axis scatterers orbit the line-of-sight axis with the
/// target's spin rate, on a circle of radius `radial_offset` displaced
/// radial_offset/tan(half_angle) toward the array.  Throws
/// std::invalid_argument for an off-axis scatterer with a non-positive cone
/// half-angle.
Eigen::Vector3d scatterer_position(const TargetState& target,
                                   const ScattererState& sc, double t);

/// Doppler shift of a translating target in subcarrier wavenumber k:
/// k * v * cos(heading) / (2*pi).
double linear_doppler(const TargetState& target, double wavenumber);

/// Phase offset of the spin-induced azimuth oscillation, from the viewing
/// direction: atan2(cos(phi0) sin(theta0), sin(phi0)).
double doppler_phase_offset(const TargetState& target);

/// Dimensionless modulation depth of the spin-induced azimuth oscillation
/// (closed form; always negative for an off-axis scatterer).
double doppler_gain(const TargetState& target, const ScattererState& sc);

/// Spin-induced Doppler shift observed in vortex mode `mode` at time t:
/// (mode / 2*pi) * g * spin * cos(spin*t + phase0 + delta).  Zero for mode 0
/// or an on-axis scatterer.
double rotational_doppler(const TargetState& target, const ScattererState& sc,
                          int mode, double t);

}  // namespace oamrc
