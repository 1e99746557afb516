#pragma once

// Estimation-theoretic analysis of the echo model and the downlink:
//  * EchoModel — the deterministic raw echo as a differentiable function of
//    the estimable parameters (range, elevation, azimuth, spin per target),
//    with closed-form partial derivatives;
//  * Fisher information accumulated over observation instants, and the
//    resulting lower bound on position/spin error variances;
//  * zero-forcing detection and the analytic per-mode SINR / average rate of
//    the downlink under imperfect channel knowledge.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "oamrc/forward_model.hpp"
#include "oamrc/numerics.hpp"
#include "oamrc/scene.hpp"

namespace oamrc {

enum class ParamKind { kRange, kElevation, kAzimuth, kSpin };

/// One estimable parameter: 4 per target, in kind order above.
struct ParamRef {
  int target = 0;
  ParamKind kind = ParamKind::kRange;
};

/// Deterministic raw echo as a function of the estimable parameter vector.
///
/// The parameters steer the model as the estimator sees them: each target's
/// centroid return moves with its (range, elevation, azimuth); the spin rate
/// enters through the apex scatterer's azimuth modulation (first-harmonic
/// law, the same one the closed-form Doppler uses); every other scatterer
/// coordinate is held at its reference track.  value() and derivative() are
/// exactly consistent — central differences of value() converge to
/// derivative() — which is what the gradient checks verify.
class EchoModel {
 public:
  EchoModel(const OamSystemConfig& cfg, std::vector<TargetState> targets,
            const WeightVector& weights);

  int num_params() const { return 4 * static_cast<int>(targets_.size()); }
  ParamRef param(int i) const;
  /// Reference parameter vector (the scene's true values).
  Eigen::VectorXd reference() const;

  /// Raw echo (modes x subcarriers) at parameter vector p and time t.
  CMat value(const Eigen::VectorXd& p, double t) const;
  /// Analytic partial derivative with respect to parameter i.
  CMat derivative(const Eigen::VectorXd& p, int i, double t) const;

 private:
  enum class Flavor { kValue, kDRange, kDElevation, kDAzimuth };
  CMat scatterer_term(const ScattererState& sc, double r, double theta,
                      double phi, Flavor flavor) const;

  OamSystemConfig cfg_;
  std::vector<TargetState> targets_;
  WeightVector weights_;
};

/// An observation instant and how many independent looks it contributes.
struct TimeWeight {
  double t = 0.0;
  double multiplicity = 1.0;
};

struct FisherMatrix {
  Eigen::MatrixXd info;          ///< 4Q x 4Q, symmetric PSD
  std::vector<ParamRef> params;  ///< row/column labels
};

/// Fisher information of the estimable parameters given white noise of
/// variance 10^(-snr/10): sum over instants, modes and subcarriers of
/// Re[conj(dp_i) dp_j] / xi^2, each instant weighted by its multiplicity.
FisherMatrix fisher_matrix(const OamSystemConfig& cfg,
                           const std::vector<TargetState>& targets,
                           const WeightVector& weights, double snr_db,
                           const std::vector<TimeWeight>& times);

/// Weight- and noise-independent decomposition: with basis B_u returned
/// here, fisher_matrix.info == sum_u amplitudes(u)^2 * B_u / xi^2 for any
/// weight vector.  Lets an optimizer rescan candidate weights in O(U) per
/// candidate.
std::vector<Eigen::MatrixXd> fisher_mode_basis(
    const OamSystemConfig& cfg, const std::vector<TargetState>& targets,
    const std::vector<TimeWeight>& times);

struct PcrbResult {
  Eigen::VectorXd bound;  ///< per-parameter variance bound; +inf when absent
  bool singular = false;  ///< true when the identifiable block is ill-posed
  double condition = 0.0; ///< scale-free condition of the identifiable block
};

/// Diagonal of the inverse Fisher matrix.  Parameters carrying exactly zero
/// information (an identically vanishing derivative) are excluded from the
/// inversion and reported as +inf rather than poisoning the rest.  The
/// remainder is inverted after equilibration to its correlation form, whose
/// spectrum is unit-independent; a correlation eigenvalue at or below
/// zero_tol times the largest sets the `singular` flag and falls back to the
/// pseudo-inverse.
PcrbResult pcrb(const FisherMatrix& fisher, double zero_tol = 1e-12);

// ---------------------------------------------------------------------------
// Downlink detection and rate
// ---------------------------------------------------------------------------

/// Per-subcarrier mode channels toward a user (exact element sums).
std::vector<CVec> user_mode_channels(const OamSystemConfig& cfg, double r,
                                     double theta, double phi);

/// Multiply each channel entry by (1 + relative_std * CN(0,1)) with a seeded
/// stream — a proportional channel-knowledge error.
std::vector<CVec> perturb_channels(const std::vector<CVec>& channels,
                                   double relative_std, std::uint64_t seed,
                                   std::uint64_t trial);

/// Unit-power QPSK symbols from a seeded stream.
CVec qpsk_symbols(std::mt19937_64& rng, int count);

/// One subcarrier of the sequential-mode downlink: y_u = D_u a_u s_u + z_u
/// with white noise of variance 10^(-snr/10).
CVec comm_observe(const CVec& channel, const WeightVector& weights,
                  const CVec& symbols, double snr_db, std::mt19937_64& rng);

/// Zero-forcing detection: apply the pseudo-inverse of diag(channel_est) to
/// y, recovering (weight * symbol) per mode.  Throws std::domain_error when
/// the estimated channel is rank-deficient (an entry at/near a null).
CVec zf_detect(const CVec& channel_est, const CVec& y, double rel_tol = 1e-12);

struct RateReport {
  Eigen::MatrixXd sinr;   ///< modes x subcarriers
  double avg_rate = 0.0;  ///< (1/U) sum_{u,w} log2(1 + sinr)
};

/// Analytic post-detection SINR and average rate of the zero-forcing
/// downlink: interference |D/D_est - 1|^2 a_u^2 from channel mismatch plus
/// noise xi^2 / |D_est|^2, against signal power a_u^2.
RateReport zf_rate(const OamSystemConfig& cfg, const std::vector<CVec>& channel,
                   const std::vector<CVec>& channel_est,
                   const WeightVector& weights, double snr_db);

}  // namespace oamrc
