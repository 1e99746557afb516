#pragma once

// Signal model of a uniform circular array driven in phase-rotation (vortex)
// modes across a comb of subcarriers: steering vectors in the mode and
// frequency domains, Monte Carlo echo synthesis over slow time and
// snapshots, matched compensation back to the steering domain, and the
// downlink channel toward a communication user.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "oamrc/numerics.hpp"
#include "oamrc/scene.hpp"

namespace oamrc {

/// Array and waveform description shared by every module.
struct OamSystemConfig {
  int n_elements = 17;              ///< element count (transmit = receive)
  double array_radius = 0.9;        ///< m
  std::vector<int> modes;           ///< vortex charges, ascending
  std::vector<double> wavenumbers;  ///< rad/m per subcarrier, ascending
  double gain = 1.0;                ///< folded radar amplitude scale
  double comm_gain = 1.0;           ///< folded downlink amplitude scale

  int num_modes() const { return static_cast<int>(modes.size()); }
  int num_subcarriers() const { return static_cast<int>(wavenumbers.size()); }
};

/// Throws std::invalid_argument on an inconsistent configuration (empty
/// axes, non-positive geometry, duplicate charges, or a charge the element
/// count cannot sample, i.e. |l| > (n_elements - 1) / 2).
void validate_config(const OamSystemConfig& cfg);

/// Per-mode transmit amplitudes (real, non-negative).
struct WeightVector {
  Eigen::VectorXd amplitudes;
};

WeightVector uniform_weights(int num_modes);

/// True when amplitudes are non-negative with unit total power.
bool weights_normalized(const WeightVector& w, double tol = 1e-9);

/// Throws std::invalid_argument when the weight vector does not match the
/// config's mode count or is not normalized.
void validate_weights(const OamSystemConfig& cfg, const WeightVector& w);

// ---------------------------------------------------------------------------
// Steering
// ---------------------------------------------------------------------------

/// Steering across charges at one subcarrier, toward direction (theta, phi):
/// entries exp(i l phi) J_l(k R sin theta).
CVec mode_domain_steering(const OamSystemConfig& cfg, int subcarrier,
                          double theta, double phi);

/// Steering across subcarriers at one charge, toward (r, theta): entries
/// exp(i 2 k r) J_l(k R sin theta) J_0(k R sin theta).
CVec frequency_domain_steering(const OamSystemConfig& cfg, int mode_index,
                               double r, double theta);

// ---------------------------------------------------------------------------
// Echo synthesis
// ---------------------------------------------------------------------------

/// Deterministic compensated echo (modes x subcarriers) at slow time t from
/// mean scattering amplitudes: per entry the sum over scatterers of
/// rcs * exp(i 2 k r_s) / r_s^2 * exp(i l phi_s) J_l(k R sin th_s) J_0(k R sin th_s).
CMat noise_free_echo(const OamSystemConfig& cfg,
                     const std::vector<TargetState>& targets, double t);

/// Raw received echo before compensation (unit symbols): adds the folded
/// gain, the per-mode weight, and the i^{-l} phase twist of the transmit
/// aperture to each noise-free entry.
CMat raw_echo(const OamSystemConfig& cfg,
              const std::vector<TargetState>& targets, const WeightVector& w,
              double t);

/// Invert the deterministic transmit factors of raw_echo, returning to the
/// steering (compensated) domain.  Throws std::invalid_argument when any
/// weight is zero — that mode carries no energy and cannot be equalized.
CMat compensate_echo(const OamSystemConfig& cfg, const CMat& raw,
                     const WeightVector& w);

/// Monte Carlo echo data cube in the compensated domain, laid out
/// (mode, subcarrier, slow_time, snapshot), C order.
struct EchoCube {
  int n_modes = 0;
  int n_subcarriers = 0;
  int n_times = 0;
  int n_snapshots = 0;
  std::vector<double> times;  ///< slow-time instants, seconds
  std::vector<cplx> data;

  std::size_t index(int u, int w, int n, int l) const {
    return ((static_cast<std::size_t>(u) * n_subcarriers + w) * n_times + n) *
               n_snapshots +
           l;
  }
  cplx& at(int u, int w, int n, int l) { return data[index(u, w, n, l)]; }
  const cplx& at(int u, int w, int n, int l) const {
    return data[index(u, w, n, l)];
  }
};

struct SynthesisParams {
  double snr_db = 20.0;
  std::vector<double> times{0.0};  ///< slow-time axis
  int snapshots = 1;               ///< per-instant redraws of RCS and noise
  std::uint64_t seed = 1;          ///< root seed
  std::uint64_t trial = 0;         ///< Monte Carlo trial index
  std::uint64_t stream = 0;        ///< distinguishes cubes within one trial
};

/// Synthesize an echo cube.  Scattering amplitudes are redrawn per snapshot
/// (circular complex normal around the mean, constant across modes,
/// subcarriers and slow time within a snapshot); positions evolve along the
/// slow-time axis; the additive noise floor is white with variance
/// 10^(-snr/10) relative to the calibrated unit raw-echo power, amplified by
/// 1/(gain * weight) per mode in the compensated domain.
EchoCube synthesize_echo(const OamSystemConfig& cfg,
                         const std::vector<TargetState>& targets,
                         const WeightVector& w, const SynthesisParams& params);

/// Gain that makes the scene's mean raw-echo entry power equal 1 at uniform
/// weights and t = 0 — the reference level the SNR definition uses.  Assign
/// the result to cfg.gain.
double calibrate_gain(const OamSystemConfig& cfg,
                      const std::vector<TargetState>& targets);

// ---------------------------------------------------------------------------
// Downlink channel
// ---------------------------------------------------------------------------

/// Per-element downlink channel toward a user at (r, theta, phi) on one
/// subcarrier: (comm_gain / (2 k r)) exp(-i k r - i k R sin th cos(phi + phi_m)).
CVec element_channel(const OamSystemConfig& cfg, int subcarrier, double r,
                     double theta, double phi);

/// Effective per-charge channel: the exact element sum
/// sum_m h_m exp(i l phi_m), for every charge at one subcarrier.
CVec mode_channel(const OamSystemConfig& cfg, int subcarrier, double r,
                  double theta, double phi);

/// Gain that makes the mean of |mode_channel|^2 over charges and subcarriers
/// toward (r, theta, phi) equal target_power.  Assign the result to
/// cfg.comm_gain.
double calibrate_comm_gain(const OamSystemConfig& cfg, double r, double theta,
                           double phi, double target_power);

}  // namespace oamrc
