#include "oamrc/analysis.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace oamrc {

namespace {

// Seed-split stream ids owned by this module.
constexpr std::uint64_t kCsiModule = 2;

constexpr double kSinrCap = 1e12;

// i^l for any integer l.
cplx quarter_twist(int l) {
  switch (((l % 4) + 4) % 4) {
    case 0: return {1, 0};
    case 1: return {0, 1};
    case 2: return {-1, 0};
    default: return {0, -1};
  }
}

double signed_jl(const std::vector<double>& seq, int l) {
  const int n = std::abs(l);
  double v = seq[n];
  if (l < 0 && (n & 1)) v = -v;
  return v;
}

int max_abs_mode(const OamSystemConfig& cfg) {
  int top = 0;
  for (int l : cfg.modes) top = std::max(top, std::abs(l));
  return top;
}

Eigen::Map<const CVec> flat(const CMat& m) {
  return Eigen::Map<const CVec>(m.data(), m.size());
}

}  // namespace

EchoModel::EchoModel(const OamSystemConfig& cfg, std::vector<TargetState> targets,
                     const WeightVector& weights)
    : cfg_(cfg), targets_(std::move(targets)), weights_(weights) {
  validate_config(cfg_);
  validate_weights(cfg_, weights_);
  if (targets_.empty())
    throw std::invalid_argument("echo model: need at least one target");
}

ParamRef EchoModel::param(int i) const {
  if (i < 0 || i >= num_params())
    throw std::out_of_range("echo model: parameter index");
  return {i / 4, static_cast<ParamKind>(i % 4)};
}

Eigen::VectorXd EchoModel::reference() const {
  Eigen::VectorXd ref(num_params());
  for (std::size_t q = 0; q < targets_.size(); ++q) {
    ref(4 * q + 0) = targets_[q].range0;
    ref(4 * q + 1) = targets_[q].elev0;
    ref(4 * q + 2) = targets_[q].azim0;
    ref(4 * q + 3) = targets_[q].spin;
  }
  return ref;
}

CMat EchoModel::scatterer_term(const ScattererState& sc, double r, double theta,
                               double phi, Flavor flavor) const {
  if (r <= 0.0)
    throw std::invalid_argument("echo model: scatterer at the origin");
  const int u_count = cfg_.num_modes(), w_count = cfg_.num_subcarriers();
  const int top = max_abs_mode(cfg_);
  const double sin_th = std::sin(theta), cos_th = std::cos(theta);

  CVec across(u_count);  // per-mode factors independent of the subcarrier
  for (int u = 0; u < u_count; ++u) {
    const int l = cfg_.modes[u];
    across(u) = cfg_.gain * weights_.amplitudes(u) * quarter_twist(-l) *
                sc.rcs_mean * std::polar(1.0, l * phi);
    if (flavor == Flavor::kDAzimuth) across(u) *= cplx(0, l);
  }

  CMat out(u_count, w_count);
  const double inv_r2 = 1.0 / (r * r);
  for (int w = 0; w < w_count; ++w) {
    const double k = cfg_.wavenumbers[w];
    const double x = k * cfg_.array_radius * sin_th;
    const auto seq = bessel_jn_sequence(top + 1, x);
    const cplx radial = std::polar(inv_r2, 2.0 * k * r);
    for (int u = 0; u < u_count; ++u) {
      const int l = cfg_.modes[u];
      double shape = signed_jl(seq, l) * seq[0];
      cplx extra(1, 0);
      switch (flavor) {
        case Flavor::kDRange:
          extra = 2.0 * cplx(-1.0 / r, k);
          break;
        case Flavor::kDElevation:
          // d/dtheta of J_l(x) J_0(x) with x = k R sin(theta).
          shape = k * cfg_.array_radius * cos_th *
                  (0.5 * seq[0] * (signed_jl(seq, l - 1) - signed_jl(seq, l + 1)) -
                   signed_jl(seq, l) * seq[1]);
          break;
        default:
          break;
      }
      out(u, w) = across(u) * radial * shape * extra;
    }
  }
  return out;
}

CMat EchoModel::value(const Eigen::VectorXd& p, double t) const {
  if (p.size() != num_params())
    throw std::invalid_argument("echo model: parameter vector size");
  CMat out = CMat::Zero(cfg_.num_modes(), cfg_.num_subcarriers());
  for (std::size_t q = 0; q < targets_.size(); ++q) {
    const TargetState& tgt = targets_[q];
    for (const ScattererState& sc : tgt.scatterers) {
      Spherical s = to_spherical(scatterer_position(tgt, sc, t));
      if (sc.role == ScattererRole::kCentroid) {
        s.r += p(4 * q + 0) - tgt.range0;
        s.theta += p(4 * q + 1) - tgt.elev0;
        s.phi += p(4 * q + 2) - tgt.azim0;
      } else if (sc.role == ScattererRole::kVertex) {
        // The spin rate steers the apex azimuth through the first-harmonic
        // oscillation law; at the reference rate the correction vanishes.
        const double phase = sc.phase0 + doppler_phase_offset(tgt);
        s.phi += doppler_gain(tgt, sc) *
                 (std::sin(p(4 * q + 3) * t + phase) -
                  std::sin(tgt.spin * t + phase));
      }
      out += scatterer_term(sc, s.r, s.theta, s.phi, Flavor::kValue);
    }
  }
  return out;
}

CMat EchoModel::derivative(const Eigen::VectorXd& p, int i, double t) const {
  if (p.size() != num_params())
    throw std::invalid_argument("echo model: parameter vector size");
  const ParamRef ref = param(i);
  const TargetState& tgt = targets_[ref.target];
  CMat out = CMat::Zero(cfg_.num_modes(), cfg_.num_subcarriers());

  if (ref.kind == ParamKind::kSpin) {
    for (const ScattererState& sc : tgt.scatterers) {
      if (sc.role != ScattererRole::kVertex) continue;
      Spherical s = to_spherical(scatterer_position(tgt, sc, t));
      const double phase = sc.phase0 + doppler_phase_offset(tgt);
      const double omega = p(4 * ref.target + 3);
      const double g = doppler_gain(tgt, sc);
      s.phi += g * (std::sin(omega * t + phase) - std::sin(tgt.spin * t + phase));
      const double swing = g * t * std::cos(omega * t + phase);
      out += swing * scatterer_term(sc, s.r, s.theta, s.phi, Flavor::kDAzimuth);
    }
    return out;
  }

  Flavor flavor = Flavor::kDRange;
  if (ref.kind == ParamKind::kElevation) flavor = Flavor::kDElevation;
  if (ref.kind == ParamKind::kAzimuth) flavor = Flavor::kDAzimuth;
  for (const ScattererState& sc : tgt.scatterers) {
    if (sc.role != ScattererRole::kCentroid) continue;
    Spherical s = to_spherical(scatterer_position(tgt, sc, t));
    s.r += p(4 * ref.target + 0) - tgt.range0;
    s.theta += p(4 * ref.target + 1) - tgt.elev0;
    s.phi += p(4 * ref.target + 2) - tgt.azim0;
    out += scatterer_term(sc, s.r, s.theta, s.phi, flavor);
  }
  return out;
}

FisherMatrix fisher_matrix(const OamSystemConfig& cfg,
                           const std::vector<TargetState>& targets,
                           const WeightVector& weights, double snr_db,
                           const std::vector<TimeWeight>& times) {
  const EchoModel model(cfg, targets, weights);
  const int n_params = model.num_params();
  const Eigen::VectorXd ref = model.reference();
  const double xi2 = std::pow(10.0, -snr_db / 10.0);

  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n_params, n_params);
  CMat rows(n_params, cfg.num_modes() * cfg.num_subcarriers());
  for (const TimeWeight& tw : times) {
    for (int i = 0; i < n_params; ++i)
      rows.row(i) = flat(model.derivative(ref, i, tw.t)).transpose();
    acc.noalias() +=
        tw.multiplicity * (rows.conjugate() * rows.transpose()).real();
  }
  acc /= xi2;

  FisherMatrix out;
  out.info = 0.5 * (acc + acc.transpose());
  out.params.reserve(n_params);
  for (int i = 0; i < n_params; ++i) out.params.push_back(model.param(i));
  return out;
}

std::vector<Eigen::MatrixXd> fisher_mode_basis(
    const OamSystemConfig& cfg, const std::vector<TargetState>& targets,
    const std::vector<TimeWeight>& times) {
  const int u_count = cfg.num_modes(), w_count = cfg.num_subcarriers();
  const EchoModel model(cfg, targets, uniform_weights(u_count));
  const int n_params = model.num_params();
  const Eigen::VectorXd ref = model.reference();

  std::vector<Eigen::MatrixXd> basis(
      u_count, Eigen::MatrixXd::Zero(n_params, n_params));
  CMat rows(n_params, u_count * w_count);
  CMat sub(n_params, w_count);
  for (const TimeWeight& tw : times) {
    for (int i = 0; i < n_params; ++i)
      rows.row(i) = flat(model.derivative(ref, i, tw.t)).transpose();
    for (int u = 0; u < u_count; ++u) {
      // Column-major flattening of (modes x subcarriers) puts mode u of
      // subcarrier w at position w * u_count + u.
      for (int w = 0; w < w_count; ++w) sub.col(w) = rows.col(w * u_count + u);
      basis[u].noalias() +=
          tw.multiplicity * (sub.conjugate() * sub.transpose()).real();
    }
  }
  // The probe weights carried 1/U per-mode power; the basis is per unit power.
  for (auto& b : basis) {
    b *= double(u_count);
    b = 0.5 * (b + b.transpose()).eval();
  }
  return basis;
}

PcrbResult pcrb(const FisherMatrix& fisher, double zero_tol) {
  const int n = static_cast<int>(fisher.info.rows());
  if (fisher.info.cols() != n)
    throw std::invalid_argument("pcrb: Fisher matrix must be square");
  PcrbResult out;
  out.bound =
      Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());

  // A diagonal entry is a sum of |derivative|^2 terms, so it vanishes only
  // when the parameter leaves every observation untouched.
  std::vector<int> kept;
  for (int i = 0; i < n; ++i)
    if (fisher.info(i, i) > 0.0) kept.push_back(i);
  const int m = static_cast<int>(kept.size());
  if (m == 0) return out;

  // Equilibrate to the correlation matrix: parameters carry wildly different
  // units, and only the scale-free spectrum says whether the joint problem
  // is well posed.
  Eigen::VectorXd scale(m);
  for (int a = 0; a < m; ++a)
    scale(a) = 1.0 / std::sqrt(fisher.info(kept[a], kept[a]));
  Eigen::MatrixXd corr(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      corr(a, b) = fisher.info(kept[a], kept[b]) * scale(a) * scale(b);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double lo = ev(0), hi = ev(m - 1);
  out.condition = (lo > 0.0) ? hi / lo : std::numeric_limits<double>::infinity();
  out.singular = !(lo > zero_tol * hi);

  // Invert through the eigenbasis; dropping non-positive directions doubles
  // as the pseudo-inverse fallback in the flagged-singular case.
  Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(m);
  for (int a = 0; a < m; ++a)
    if (ev(a) > zero_tol * hi) inv_ev(a) = 1.0 / ev(a);
  const Eigen::MatrixXd inv =
      es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
  for (int a = 0; a < m; ++a)
    out.bound(kept[a]) = inv(a, a) * scale(a) * scale(a);
  return out;
}

std::vector<CVec> user_mode_channels(const OamSystemConfig& cfg, double r,
                                     double theta, double phi) {
  validate_config(cfg);
  std::vector<CVec> out;
  out.reserve(cfg.num_subcarriers());
  for (int w = 0; w < cfg.num_subcarriers(); ++w)
    out.push_back(mode_channel(cfg, w, r, theta, phi));
  return out;
}

std::vector<CVec> perturb_channels(const std::vector<CVec>& channels,
                                   double relative_std, std::uint64_t seed,
                                   std::uint64_t trial) {
  if (relative_std < 0.0)
    throw std::invalid_argument("perturb_channels: negative error level");
  auto rng = make_rng(seed, trial, kCsiModule, 0);
  std::vector<CVec> out = channels;
  for (CVec& ch : out)
    for (Eigen::Index u = 0; u < ch.size(); ++u)
      ch(u) *= cplx(1, 0) + relative_std * gaussian_cplx(rng);
  return out;
}

CVec qpsk_symbols(std::mt19937_64& rng, int count) {
  if (count < 0) throw std::invalid_argument("qpsk_symbols: negative count");
  const double amp = 1.0 / std::sqrt(2.0);
  CVec s(count);
  for (int i = 0; i < count; ++i) {
    const double re = uniform01(rng) < 0.5 ? amp : -amp;
    const double im = uniform01(rng) < 0.5 ? amp : -amp;
    s(i) = cplx(re, im);
  }
  return s;
}

CVec comm_observe(const CVec& channel, const WeightVector& weights,
                  const CVec& symbols, double snr_db, std::mt19937_64& rng) {
  const Eigen::Index n = channel.size();
  if (weights.amplitudes.size() != n || symbols.size() != n)
    throw std::invalid_argument("comm_observe: size mismatch");
  const double xi = std::pow(10.0, -snr_db / 20.0);
  CVec y(n);
  for (Eigen::Index u = 0; u < n; ++u)
    y(u) = channel(u) * weights.amplitudes(u) * symbols(u) +
           xi * gaussian_cplx(rng);
  return y;
}

CVec zf_detect(const CVec& channel_est, const CVec& y, double rel_tol) {
  if (channel_est.size() != y.size())
    throw std::invalid_argument("zf_detect: size mismatch");
  const double top = channel_est.cwiseAbs().maxCoeff();
  CVec out(y.size());
  for (Eigen::Index u = 0; u < y.size(); ++u) {
    if (!(std::abs(channel_est(u)) > rel_tol * top))
      throw std::domain_error(
          "zf_detect: estimated channel has a dead mode and cannot be "
          "equalized");
    out(u) = y(u) / channel_est(u);
  }
  return out;
}

RateReport zf_rate(const OamSystemConfig& cfg, const std::vector<CVec>& channel,
                   const std::vector<CVec>& channel_est,
                   const WeightVector& weights, double snr_db) {
  const int u_count = cfg.num_modes(), w_count = cfg.num_subcarriers();
  if (static_cast<int>(channel.size()) != w_count ||
      static_cast<int>(channel_est.size()) != w_count ||
      weights.amplitudes.size() != u_count)
    throw std::invalid_argument("zf_rate: shape mismatch");
  const double xi2 = std::pow(10.0, -snr_db / 10.0);

  RateReport rep;
  rep.sinr = Eigen::MatrixXd::Zero(u_count, w_count);
  for (int w = 0; w < w_count; ++w) {
    if (channel[w].size() != u_count || channel_est[w].size() != u_count)
      throw std::invalid_argument("zf_rate: shape mismatch");
    for (int u = 0; u < u_count; ++u) {
      const double a2 = weights.amplitudes(u) * weights.amplitudes(u);
      const double est2 = std::norm(channel_est[w](u));
      if (est2 == 0.0) continue;  // equalizer blows up; no useful signal
      const double leak = std::norm(channel[w](u) / channel_est[w](u) - 1.0) * a2;
      const double sinr = std::min(a2 / (leak + xi2 / est2), kSinrCap);
      rep.sinr(u, w) = sinr;
      rep.avg_rate += std::log2(1.0 + sinr);
    }
  }
  rep.avg_rate /= u_count;
  return rep;
}

}  // namespace oamrc
