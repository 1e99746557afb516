#pragma once

// Subspace-based 3-D position estimation from an echo cube: sample
// covariances of mode-domain and frequency-domain slices, noise subspaces,
// spatial spectra scanned on 2-D grids, peak extraction with one quadratic
// interpolation step, association of peaks across slices, and averaging into
// per-scatterer (range, elevation, azimuth) estimates.
//
// With uniformly spaced wavenumbers the frequency-domain spectrum is exactly
// periodic in range with period pi / spacing, so the scan covers one
// canonical period and the absolute range is recovered by unfolding toward
// configured coarse-range anchors (stand-ins for symbol-timing coarse
// ranging, which is out of scope).

#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "oamrc/forward_model.hpp"
#include "oamrc/numerics.hpp"

namespace oamrc {

struct MusicSpectrum {
  Eigen::VectorXd axis1;     ///< first scan axis (theta or range), ascending
  Eigen::VectorXd axis2;     ///< second scan axis (phi or theta), ascending
  Eigen::MatrixXd values;    ///< axis1.size() x axis2.size(), finite, > 0
  bool axis1_periodic = false;
  bool axis2_periodic = false;
  double period1 = 0.0;      ///< axis period when periodic (else unused)
  double period2 = 0.0;
  bool saturated = false;    ///< a denominator hit the cap (exact null)
};

enum class CovarianceSlice {
  kModeVector,      ///< fix a subcarrier, vectors across modes (U x U)
  kFrequencyVector  ///< fix a mode, vectors across subcarriers (W x W)
};

/// Sample covariance (1/L) sum of slice-vector outer products over every
/// (slow-time, snapshot) pair of the cube.  Throws on an empty cube or an
/// index outside the fixed axis.
CMat sample_covariance(const EchoCube& cube, CovarianceSlice slice, int index);

/// Eigenvectors of the (dim - signal_dim) smallest eigenvalues, one per
/// column.  Diagonal loading of `loading` times the trace is added before
/// the decomposition for numerical stability.  Throws when signal_dim is
/// negative or does not leave room for a noise subspace.
CMat noise_subspace(const CMat& covariance, int signal_dim,
                    double loading = 1e-10);

using SteeringFn = std::function<CVec(double axis1, double axis2)>;

/// Scan 1 / ||Qn^H a(axis1, axis2)||^2 over the grid.  Values are capped at
/// 1e18 (saturation flagged) so an exact null cannot produce infinities.
MusicSpectrum music_spectrum(const CMat& noise_sub, const SteeringFn& steering,
                             const Eigen::VectorXd& axis1,
                             const Eigen::VectorXd& axis2);

/// music_spectrum with the mode-domain steering family of one subcarrier
/// (axes: theta, phi), factorized over the vortex-charge differences so wide
/// azimuth grids cost O(U) per node instead of O(U^2).
MusicSpectrum mode_domain_spectrum(const OamSystemConfig& cfg, int subcarrier,
                                   const CMat& noise_sub,
                                   const Eigen::VectorXd& theta_axis,
                                   const Eigen::VectorXd& phi_axis);

/// music_spectrum with the frequency-domain steering family of one mode
/// (axes: range, theta); factorized over wavenumber differences when the
/// subcarrier comb is uniformly spaced.
MusicSpectrum frequency_domain_spectrum(const OamSystemConfig& cfg,
                                        int mode_index, const CMat& noise_sub,
                                        const Eigen::VectorXd& range_axis,
                                        const Eigen::VectorXd& theta_axis);

struct Peak {
  double axis1 = 0.0;
  double axis2 = 0.0;
  double value = 0.0;
};

struct PeakList {
  std::vector<Peak> peaks;  ///< descending by value
  bool shortfall = false;   ///< fewer strict local maxima than requested
};

/// The n_peaks largest strict local maxima over the 8-neighborhood
/// (periodic axes wrap), each refined by one quadratic interpolation step
/// per axis.  Returns what exists and flags a shortfall.
PeakList peak_search(const MusicSpectrum& spectrum, int n_peaks);

/// Match every candidate list against the reference points by greedy
/// nearest-neighbor pairing (best global pair first, each point used once)
/// in coordinates normalized by the reference spread per axis.  A nonzero
/// period makes that axis circular.  Returns, per reference point, its
/// matches in candidate-list order (lists shorter than the reference yield
/// fewer matches).
std::vector<std::vector<Peak>> associate_peaks(
    const std::vector<Peak>& reference,
    const std::vector<std::vector<Peak>>& candidates, double period1 = 0.0,
    double period2 = 0.0);

struct ImagingGrid {
  double theta_min = 5.0 * std::numbers::pi / 180.0;
  double theta_max = 0.5 * std::numbers::pi;
  double phi_min = 0.0;
  double phi_max = 2.0 * std::numbers::pi;
  double range_min = 18.0;   ///< m; used directly when no range period exists
  double range_max = 300.0;
  double angle_step = 0.2 * std::numbers::pi / 180.0;  ///< coarse, rad
  double range_step = 0.2;   ///< coarse, m
  /// Refinement ratio per rung: local polishing runs at step/refine_factor,
  /// the elevation line scans and the final interpolation at
  /// step/refine_factor^2.
  int refine_factor = 10;
};

struct ImagingOptions {
  int signal_dim = 1;  ///< number of scatterers the subspace split assumes
  ImagingGrid grid;
  /// Coarse absolute-range anchors (one per expected scatterer cluster).
  /// When the scan runs over a canonical period, each estimate unfolds to
  /// the closest congruent range of its best-matching anchor; when empty,
  /// folded ranges inside the canonical window are reported as-is.
  std::vector<double> range_gates;
};

struct PositionEstimate {
  double range = 0.0;      ///< m
  double elevation = 0.0;  ///< rad, in [0, pi]
  double azimuth = 0.0;    ///< rad, wrapped to [0, 2*pi)
  int mode_domain_count = 0;  ///< subcarrier slices that contributed
  int freq_domain_count = 0;  ///< mode slices that contributed
  bool shortfall = false;
  // Per-slice intermediates, in matched-slice order (diagnostics and
  // variance bookkeeping).
  Eigen::VectorXd theta_by_subcarrier, phi_by_subcarrier;
  Eigen::VectorXd range_by_mode, theta_by_mode;
};

/// End-to-end position estimation: per-subcarrier (theta, phi) scans and
/// per-mode (range, theta) scans, peak association across slices against the
/// strongest slice, azimuth averaged over subcarriers, range averaged over
/// modes, elevation averaged over all U + W slice estimates.  Requires
/// signal_dim < min(U, W).
///
/// Elevation needs care: the truncated Bessel-amplitude steering family has
/// near-parallel pairs a couple of degrees apart whose spectrum floors can
/// exceed the off-node value of the true (very narrow) peak on any uniform
/// grid, so a single slice scanned alone may lock onto such a sidelobe.
/// The sidelobe positions shift with the carrier wavenumber while the true
/// elevation is common, so after azimuth (or range) is locked per slice the
/// candidate elevation basins are scored by the summed denominators across
/// all slices of the domain; each slice then polishes its own estimate in a
/// small window around the consensus elevation.  Per-slice estimators and
/// the mean-based fusion are unchanged by this.
std::vector<PositionEstimate> estimate_positions(const OamSystemConfig& cfg,
                                                 const EchoCube& cube,
                                                 const ImagingOptions& opt);

}  // namespace oamrc
