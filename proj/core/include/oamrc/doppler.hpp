#pragma once

// Spin-rate readout from slow-time echoes.  Each (charge, subcarrier) cell of
// an echo cube is a complex slow-time series whose instantaneous frequency is
// the sum of a bulk term common to every charge (translation along the line
// of sight) and a charge-proportional oscillation at the target's rotation
// rate.  The chain implemented here: short-time spectrogram per cell, ridge
// tracks linked across frames, bulk removal by differencing against the
// charge-0 cell, rotation period from the track autocorrelation, and an
// average across charges.
//
// The rotation-induced swing is a small fraction of a spectrogram bin for
// realistic target sizes (the same aperture factor that forms the beam caps
// the usable arm length), so ridge frequencies are read with sub-bin peak
// interpolation and the period detector works on the interpolated track
// rather than on bin indices.

#include <vector>

#include "oamrc/forward_model.hpp"
#include "oamrc/numerics.hpp"

namespace oamrc {

/// One time-frequency ridge of a (charge, subcarrier) cell.
struct DopplerTrack {
  std::vector<double> times;        ///< frame centers, s, strictly increasing
  std::vector<double> frequencies;  ///< ridge frequency per frame, Hz
  int mode = 0;                     ///< vortex charge the ridge lives on
  int subcarrier = 0;               ///< subcarrier index within the comb
};

/// Ridge-extraction knobs.  `stft.sample_rate` is ignored; the cube's
/// slow-time axis sets it.
struct TrackingOptions {
  StftParams stft;             ///< analysis window, hop and padding
  double rel_threshold = 0.2;  ///< candidate gate, fraction of the cell peak
  int max_tracks = 1;          ///< ridges to keep (scatterer budget)
  int snapshot = 0;            ///< snapshot column of the cube to read
  /// Centered running-median length applied to each finished track.  When an
  /// amplitude null of the aperture factor falls inside one analysis window
  /// the spectral peak splits into lobes offset from the ridge, corrupting
  /// the frames that straddle the null; those excursions last at most
  /// window/hop frames and a median across twice that span removes them.
  /// Set to 1 to disable.
  int median_frames = 17;
};

/// Period-detection knobs.
struct SpinOptions {
  /// Minimum autocorrelation peak relative to the zero-lag value for a track
  /// to count as periodic.  White ridge jitter scores near zero, a clean
  /// periodic track close to one; tracks dominated by the bias patches left
  /// where the aperture factor nulls the cell sit in between, and the
  /// default is chosen to reject them.
  double periodicity_threshold = 0.45;
  /// Required observation span in rotation periods.
  double min_periods = 2.0;
  /// Shortest admissible period, in track samples.  Ridge samples come from
  /// overlapping analysis windows and are smoothed below, so they correlate
  /// over a known number of frames; lags inside that range would read as a
  /// fast rotation on any track.
  int min_period_lags = 24;
  /// Centered moving-average length applied to the track before the
  /// autocorrelation; averages down ridge jitter that is a sizable fraction
  /// of the modulation swing at low snr.  Must stay well under the period.
  int smooth_frames = 9;
};

/// Rotation-rate estimate fused over vortex charges.
struct SpinEstimate {
  double spin = 0.0;             ///< fused rate, rad/s; 0 when stationary
  std::vector<int> modes;        ///< charges that contributed
  std::vector<double> per_mode;  ///< per-charge rates, rad/s
  std::vector<double> periods;   ///< per-charge period estimates, s
  /// Charges dropped for a sub-two-period span or for a period inconsistent
  /// with the cross-charge consensus.
  std::vector<int> excluded;
  bool stationary = false;       ///< no periodic modulation found
};

/// Magnitude spectrogram of the (u, w) slow-time series of a cube.  The
/// sample rate comes from the cube's time axis, which must be uniform.
/// Throws std::invalid_argument on bad indices or a slow-time axis shorter
/// than two analysis frames.
Spectrogram cell_spectrogram(const EchoCube& cube, int u, int w,
                             const StftParams& params, int snapshot = 0);

/// Ridge tracks of the (u, w) cell, strongest first.  Per frame, the ridge
/// candidates are the local spectrum maxima above `rel_threshold` times the
/// cell's peak magnitude, keeping at most `max_tracks` per frame; candidates
/// are linked across frames by nearest frequency to each track's linear
/// continuation.  Frames where a track's ridge dips below the gate (the
/// aperture factor crossing a null, say) inherit the linear interpolation of
/// their neighbours, so a track covers every frame between its first and
/// last detection.  Throws std::invalid_argument when no frame has a
/// candidate above the gate.
std::vector<DopplerTrack> extract_tracks(const OamSystemConfig& cfg,
                                         const EchoCube& cube, int u, int w,
                                         const TrackingOptions& opt = {});

/// Pointwise frequency difference signal - reference: the bulk term is
/// common to all charges at one subcarrier, so differencing against the
/// charge-0 ridge leaves the rotation-induced part.  Throws
/// std::invalid_argument when the signal track has charge 0, the reference
/// has nonzero charge, or the tracks disagree in subcarrier or time axis.
DopplerTrack rotational_component(const DopplerTrack& signal,
                                  const DopplerTrack& reference);

/// Rotation rate from rotational-component tracks, one per nonzero charge.
/// Per track: candidate periods are the positive-lag peaks of the track's
/// autocorrelation; after correcting the lag taper a periodic track peaks
/// equally at every multiple of its period, so the period is the smallest
/// candidate within 15% of the tallest, refined by parabolic interpolation.
/// The per-charge rate is 2*pi over that period, and the fused rate is the
/// mean over charges after discarding readings inconsistent with the
/// cross-charge consensus (every charge watches the same rotation).  Tracks
/// spanning fewer than two estimated periods are excluded and recorded;
/// tracks without significant periodicity mark the stationary case.  Throws
/// std::invalid_argument on malformed tracks, a charge-0 track, an empty
/// input, or when every track is excluded for a short span.
SpinEstimate estimate_spin(const std::vector<DopplerTrack>& rotational,
                           const SpinOptions& opt = {});

/// Rotational-component tracks for one subcarrier of a cube: extract tracks
/// for every charge, difference each nonzero charge against the charge-0
/// reference (required in the mode set), and keep the most strongly
/// modulated track per charge when several ridges were kept.  Throws
/// std::invalid_argument when the mode set lacks charge 0 or when no
/// nonzero-charge track overlaps the reference.
std::vector<DopplerTrack> rotational_tracks(const OamSystemConfig& cfg,
                                            const EchoCube& cube,
                                            int subcarrier,
                                            const TrackingOptions& opt = {});

/// Full pipeline over one subcarrier of a cube: the rotational-component
/// tracks of that subcarrier, fused into a single rate.
SpinEstimate spin_from_cube(const OamSystemConfig& cfg, const EchoCube& cube,
                            int subcarrier, const TrackingOptions& topt = {},
                            const SpinOptions& sopt = {});

/// Full pipeline pooled over every subcarrier of the cube.  The rotation
/// rate is set by geometry, so all subcarriers watch the same modulation
/// while their noise draws are independent; pooling the rotational tracks
/// before fusing multiplies the periodicity readings per charge and keeps a
/// trial alive when one subcarrier's cell happens to sit on an
/// aperture-factor null.  Subcarriers where extraction fails outright are
/// skipped; throws std::invalid_argument only when all of them fail.
SpinEstimate spin_from_cube_pooled(const OamSystemConfig& cfg,
                                   const EchoCube& cube,
                                   const TrackingOptions& topt = {},
                                   const SpinOptions& sopt = {});

}  // namespace oamrc
