#include "oamrc/forward_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace oamrc {

using std::numbers::pi;

namespace {

// Seed-split stream ids owned by this module.
constexpr std::uint64_t kSynthesisModule = 1;

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

// Flattened view of every scatterer in the scene.
struct FlatScatterer {
  const TargetState* target;
  const ScattererState* sc;
};

std::vector<FlatScatterer> flatten(const std::vector<TargetState>& targets) {
  std::vector<FlatScatterer> out;
  for (const auto& t : targets)
    for (const auto& s : t.scatterers) out.push_back({&t, &s});
  return out;
}

// Compensated-domain contribution of one scatterer at one instant, without
// its scattering amplitude: entries exp(2ikr)/r^2 * exp(il phi) J_l J_0.
CMat unit_contribution(const OamSystemConfig& cfg, const FlatScatterer& fs,
                       double time) {
  const int u_count = cfg.num_modes(), w_count = cfg.num_subcarriers();
  const Spherical s =
      to_spherical(scatterer_position(*fs.target, *fs.sc, time));
  if (s.r <= 0.0)
    throw std::invalid_argument("echo model: scatterer at the origin");
  const int top = max_abs_mode(cfg);

  // exp(il phi) over the charge list, built once per scatterer.
  CVec azim(u_count);
  for (int u = 0; u < u_count; ++u)
    azim(u) = std::polar(1.0, cfg.modes[u] * s.phi);

  CMat out(u_count, w_count);
  const double inv_r2 = 1.0 / (s.r * s.r);
  const double sin_th = std::sin(s.theta);
  for (int w = 0; w < w_count; ++w) {
    const double k = cfg.wavenumbers[w];
    const auto seq = bessel_jn_sequence(top, k * cfg.array_radius * sin_th);
    const cplx radial = std::polar(inv_r2, 2.0 * k * s.r);
    for (int u = 0; u < u_count; ++u)
      out(u, w) = radial * azim(u) * (signed_jl(seq, cfg.modes[u]) * seq[0]);
  }
  return out;
}

}  // namespace

void validate_config(const OamSystemConfig& cfg) {
  if (cfg.n_elements < 1)
    throw std::invalid_argument("config: need at least one element");
  if (cfg.array_radius <= 0.0)
    throw std::invalid_argument("config: array radius must be positive");
  if (cfg.modes.empty() || cfg.wavenumbers.empty())
    throw std::invalid_argument("config: empty mode or subcarrier axis");
  for (std::size_t i = 0; i < cfg.modes.size(); ++i) {
    if (2 * std::abs(cfg.modes[i]) > cfg.n_elements - 1)
      throw std::invalid_argument(
          "config: element count cannot sample this vortex charge");
    for (std::size_t j = i + 1; j < cfg.modes.size(); ++j)
      if (cfg.modes[i] == cfg.modes[j])
        throw std::invalid_argument("config: duplicate vortex charge");
  }
  for (std::size_t w = 0; w < cfg.wavenumbers.size(); ++w) {
    if (cfg.wavenumbers[w] <= 0.0)
      throw std::invalid_argument("config: wavenumbers must be positive");
    if (w > 0 && cfg.wavenumbers[w] <= cfg.wavenumbers[w - 1])
      throw std::invalid_argument("config: wavenumbers must ascend");
  }
  if (cfg.gain <= 0.0 || cfg.comm_gain <= 0.0)
    throw std::invalid_argument("config: gains must be positive");
}

WeightVector uniform_weights(int num_modes) {
  WeightVector w;
  w.amplitudes =
      Eigen::VectorXd::Constant(num_modes, 1.0 / std::sqrt(double(num_modes)));
  return w;
}

bool weights_normalized(const WeightVector& w, double tol) {
  if (w.amplitudes.size() == 0) return false;
  if ((w.amplitudes.array() < 0.0).any()) return false;
  return std::abs(w.amplitudes.squaredNorm() - 1.0) <= tol;
}

void validate_weights(const OamSystemConfig& cfg, const WeightVector& w) {
  if (w.amplitudes.size() != cfg.num_modes())
    throw std::invalid_argument("weights: size does not match mode count");
  if (!weights_normalized(w))
    throw std::invalid_argument("weights: need non-negative unit-power vector");
}

CVec mode_domain_steering(const OamSystemConfig& cfg, int subcarrier,
                          double theta, double phi) {
  const double k = cfg.wavenumbers.at(subcarrier);
  const auto seq =
      bessel_jn_sequence(max_abs_mode(cfg), k * cfg.array_radius * std::sin(theta));
  CVec a(cfg.num_modes());
  for (int u = 0; u < cfg.num_modes(); ++u)
    a(u) = std::polar(1.0, cfg.modes[u] * phi) * signed_jl(seq, cfg.modes[u]);
  return a;
}

CVec frequency_domain_steering(const OamSystemConfig& cfg, int mode_index,
                               double r, double theta) {
  const int l = cfg.modes.at(mode_index);
  CVec b(cfg.num_subcarriers());
  for (int w = 0; w < cfg.num_subcarriers(); ++w) {
    const double k = cfg.wavenumbers[w];
    const auto seq =
        bessel_jn_sequence(std::abs(l), k * cfg.array_radius * std::sin(theta));
    b(w) = std::polar(1.0, 2.0 * k * r) * signed_jl(seq, l) * seq[0];
  }
  return b;
}

CMat noise_free_echo(const OamSystemConfig& cfg,
                     const std::vector<TargetState>& targets, double t) {
  CMat out = CMat::Zero(cfg.num_modes(), cfg.num_subcarriers());
  for (const auto& fs : flatten(targets))
    out += fs.sc->rcs_mean * unit_contribution(cfg, fs, t);
  return out;
}

CMat raw_echo(const OamSystemConfig& cfg,
              const std::vector<TargetState>& targets, const WeightVector& w,
              double t) {
  validate_weights(cfg, w);
  CMat out = noise_free_echo(cfg, targets, t);
  for (int u = 0; u < cfg.num_modes(); ++u)
    out.row(u) *= cfg.gain * w.amplitudes(u) * quarter_twist(-cfg.modes[u]);
  return out;
}

CMat compensate_echo(const OamSystemConfig& cfg, const CMat& raw,
                     const WeightVector& w) {
  if (raw.rows() != cfg.num_modes() || w.amplitudes.size() != cfg.num_modes())
    throw std::invalid_argument("compensate_echo: shape mismatch");
  CMat out = raw;
  for (int u = 0; u < cfg.num_modes(); ++u) {
    const double a = w.amplitudes(u);
    if (a <= 0.0)
      throw std::invalid_argument(
          "compensate_echo: mode with zero weight cannot be equalized");
    out.row(u) *= quarter_twist(cfg.modes[u]) / (cfg.gain * a);
  }
  return out;
}

EchoCube synthesize_echo(const OamSystemConfig& cfg,
                         const std::vector<TargetState>& targets,
                         const WeightVector& w, const SynthesisParams& params) {
  validate_config(cfg);
  validate_weights(cfg, w);
  if (params.times.empty() || params.snapshots < 1)
    throw std::invalid_argument("synthesize_echo: empty time or snapshot axis");

  const int u_count = cfg.num_modes(), w_count = cfg.num_subcarriers();
  const int n_count = static_cast<int>(params.times.size());
  const int l_count = params.snapshots;
  const auto flats = flatten(targets);

  EchoCube cube;
  cube.n_modes = u_count;
  cube.n_subcarriers = w_count;
  cube.n_times = n_count;
  cube.n_snapshots = l_count;
  cube.times = params.times;
  cube.data.assign(static_cast<std::size_t>(u_count) * w_count * n_count *
                       l_count,
                   cplx(0, 0));

  // Scattering amplitude draws: one complex normal per (snapshot, scatterer),
  // shared across modes, subcarriers and slow time.
  auto rcs_rng =
      make_rng(params.seed, params.trial, kSynthesisModule, 2 * params.stream);
  std::vector<cplx> draws(static_cast<std::size_t>(l_count) * flats.size());
  for (int l = 0; l < l_count; ++l)
    for (std::size_t s = 0; s < flats.size(); ++s)
      draws[l * flats.size() + s] = gaussian_cplx(rcs_rng);

  auto noise_rng = make_rng(params.seed, params.trial, kSynthesisModule,
                            2 * params.stream + 1);
  const double xi = std::pow(10.0, -params.snr_db / 20.0);

  std::vector<CMat> contribs(flats.size());
  for (int n = 0; n < n_count; ++n) {
    for (std::size_t s = 0; s < flats.size(); ++s)
      contribs[s] = unit_contribution(cfg, flats[s], params.times[n]);
    for (int u = 0; u < u_count; ++u) {
      const double noise_scale = xi / (cfg.gain * w.amplitudes(u));
      for (int ww = 0; ww < w_count; ++ww) {
        for (int l = 0; l < l_count; ++l) {
          cplx acc(0, 0);
          for (std::size_t s = 0; s < flats.size(); ++s)
            acc += flats[s].sc->rcs_mean * draws[l * flats.size() + s] *
                   contribs[s](u, ww);
          cube.at(u, ww, n, l) = acc + noise_scale * gaussian_cplx(noise_rng);
        }
      }
    }
  }
  return cube;
}

double calibrate_gain(const OamSystemConfig& cfg,
                      const std::vector<TargetState>& targets) {
  OamSystemConfig unit = cfg;
  unit.gain = 1.0;
  const CMat raw =
      raw_echo(unit, targets, uniform_weights(cfg.num_modes()), 0.0);
  const double mean_power = raw.array().abs2().mean();
  if (mean_power <= 0.0)
    throw std::invalid_argument("calibrate_gain: scene returns no echo");
  return 1.0 / std::sqrt(mean_power);
}

CVec element_channel(const OamSystemConfig& cfg, int subcarrier, double r,
                     double theta, double phi) {
  if (r <= 0.0) throw std::invalid_argument("element_channel: r must be positive");
  const double k = cfg.wavenumbers.at(subcarrier);
  const double mag = cfg.comm_gain / (2.0 * k * r);
  const double x = k * cfg.array_radius * std::sin(theta);
  CVec h(cfg.n_elements);
  for (int m = 0; m < cfg.n_elements; ++m) {
    const double phim = 2.0 * pi * m / cfg.n_elements;
    h(m) = std::polar(mag, -k * r - x * std::cos(phi + phim));
  }
  return h;
}

CVec mode_channel(const OamSystemConfig& cfg, int subcarrier, double r,
                  double theta, double phi) {
  const CVec h = element_channel(cfg, subcarrier, r, theta, phi);
  CVec d(cfg.num_modes());
  for (int u = 0; u < cfg.num_modes(); ++u) {
    cplx acc(0, 0);
    for (int m = 0; m < cfg.n_elements; ++m)
      acc += h(m) * std::polar(1.0, cfg.modes[u] * 2.0 * pi * m / cfg.n_elements);
    d(u) = acc;
  }
  return d;
}

double calibrate_comm_gain(const OamSystemConfig& cfg, double r, double theta,
                           double phi, double target_power) {
  if (target_power <= 0.0)
    throw std::invalid_argument("calibrate_comm_gain: target must be positive");
  OamSystemConfig unit = cfg;
  unit.comm_gain = 1.0;
  double acc = 0.0;
  for (int w = 0; w < cfg.num_subcarriers(); ++w)
    acc += mode_channel(unit, w, r, theta, phi).squaredNorm();
  acc /= double(cfg.num_modes()) * cfg.num_subcarriers();
  if (acc <= 0.0)
    throw std::invalid_argument("calibrate_comm_gain: dead channel");
  return std::sqrt(target_power / acc);
}

}  // namespace oamrc
