#include "oamrc/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace oamrc {
namespace {

using std::numbers::pi;

constexpr double kSpectrumCap = 1e18;

double signed_jl(const std::vector<double>& seq, int l) {
  const int a = std::abs(l);
  const double v = seq[static_cast<std::size_t>(a)];
  return (l < 0 && (a & 1)) ? -v : v;
}

int max_abs_mode(const OamSystemConfig& cfg) {
  int top = 0;
  for (int l : cfg.modes) top = std::max(top, std::abs(l));
  return top;
}

double capped(double denom, bool& saturated) {
  if (!(denom > 1.0 / kSpectrumCap)) {
    saturated = true;
    return kSpectrumCap;
  }
  return 1.0 / denom;
}

/// Map into (-period/2, period/2].
double wrap_delta(double d, double period) {
  d = std::fmod(d, period);
  if (d > 0.5 * period) d -= period;
  if (d <= -0.5 * period) d += period;
  return d;
}

double axis_distance(double a, double b, double period) {
  return period > 0.0 ? std::abs(wrap_delta(a - b, period)) : std::abs(a - b);
}

double wrap_into(double x, double lo, double period) {
  double y = std::fmod(x - lo, period);
  if (y < 0.0) y += period;
  return lo + y;
}

/// Spacing of the subcarrier comb when uniform, else 0.
double comb_spacing(const OamSystemConfig& cfg) {
  if (cfg.num_subcarriers() < 2) return 0.0;
  const double s = cfg.wavenumbers[1] - cfg.wavenumbers[0];
  if (!(s > 0.0)) return 0.0;
  for (int w = 1; w + 1 < cfg.num_subcarriers(); ++w)
    if (std::abs(cfg.wavenumbers[w + 1] - cfg.wavenumbers[w] - s) > 1e-9 * s)
      return 0.0;
  return s;
}

/// True when an (assumed uniform) axis covers exactly one period, so the
/// grid may be treated as circular.
bool spans_full_period(const Eigen::VectorXd& axis, double period) {
  if (axis.size() < 3) return false;
  const double step = axis(1) - axis(0);
  const double span = axis(axis.size() - 1) - axis(0) + step;
  return std::abs(span - period) <= 0.5 * step;
}

/// Phase table e^{i d x_j} for d = 1..dmax over the fundamental phases x.
CMat phase_table(const Eigen::VectorXd& fundamental, int dmax) {
  CMat table(fundamental.size(), std::max(dmax, 1));
  for (Eigen::Index j = 0; j < fundamental.size(); ++j) {
    const cplx base = std::polar(1.0, fundamental(j));
    cplx cur = base;
    for (int d = 1; d <= std::max(dmax, 1); ++d) {
      table(j, d - 1) = cur;
      cur *= base;
    }
  }
  return table;
}

}  // namespace

CMat sample_covariance(const EchoCube& cube, CovarianceSlice slice,
                       int index) {
  if (cube.n_modes <= 0 || cube.n_subcarriers <= 0 || cube.n_times <= 0 ||
      cube.n_snapshots <= 0 ||
      cube.data.size() != static_cast<std::size_t>(cube.n_modes) *
                              cube.n_subcarriers * cube.n_times *
                              cube.n_snapshots)
    throw std::invalid_argument("sample_covariance: empty or inconsistent cube");
  const bool mode_vec = slice == CovarianceSlice::kModeVector;
  const int dim = mode_vec ? cube.n_modes : cube.n_subcarriers;
  const int count = mode_vec ? cube.n_subcarriers : cube.n_modes;
  if (index < 0 || index >= count)
    throw std::invalid_argument("sample_covariance: slice index out of range");

  const int looks = cube.n_times * cube.n_snapshots;
  CMat x(dim, looks);
  int col = 0;
  for (int n = 0; n < cube.n_times; ++n)
    for (int l = 0; l < cube.n_snapshots; ++l, ++col)
      for (int i = 0; i < dim; ++i)
        x(i, col) = mode_vec ? cube.at(i, index, n, l) : cube.at(index, i, n, l);
  return (x * x.adjoint()) / double(looks);
}

CMat noise_subspace(const CMat& covariance, int signal_dim, double loading) {
  const int dim = static_cast<int>(covariance.rows());
  if (signal_dim < 0 || signal_dim >= dim)
    throw std::invalid_argument(
        "noise_subspace: signal dimension leaves no noise subspace");
  CMat loaded = covariance;
  loaded.diagonal().array() += loading * covariance.trace().real();
  const Evd evd = hermitian_evd(loaded);
  return evd.eigenvectors.leftCols(dim - signal_dim);
}

MusicSpectrum music_spectrum(const CMat& noise_sub, const SteeringFn& steering,
                             const Eigen::VectorXd& axis1,
                             const Eigen::VectorXd& axis2) {
  if (axis1.size() == 0 || axis2.size() == 0)
    throw std::invalid_argument("music_spectrum: empty scan axis");
  MusicSpectrum spec;
  spec.axis1 = axis1;
  spec.axis2 = axis2;
  spec.values.resize(axis1.size(), axis2.size());
  for (Eigen::Index i = 0; i < axis1.size(); ++i)
    for (Eigen::Index j = 0; j < axis2.size(); ++j) {
      const CVec a = steering(axis1(i), axis2(j));
      if (a.size() != noise_sub.rows())
        throw std::invalid_argument(
            "music_spectrum: steering dimension mismatch");
      spec.values(i, j) = capped((noise_sub.adjoint() * a).squaredNorm(),
                                 spec.saturated);
    }
  return spec;
}

MusicSpectrum mode_domain_spectrum(const OamSystemConfig& cfg, int subcarrier,
                                   const CMat& noise_sub,
                                   const Eigen::VectorXd& theta_axis,
                                   const Eigen::VectorXd& phi_axis) {
  validate_config(cfg);
  if (subcarrier < 0 || subcarrier >= cfg.num_subcarriers())
    throw std::invalid_argument("mode_domain_spectrum: subcarrier out of range");
  const int u_count = cfg.num_modes();
  if (noise_sub.rows() != u_count)
    throw std::invalid_argument("mode_domain_spectrum: subspace dimension");
  if (theta_axis.size() == 0 || phi_axis.size() == 0)
    throw std::invalid_argument("mode_domain_spectrum: empty scan axis");

  // a_u = e^{i l_u phi} J_{l_u}(k R sin theta), so the quadratic form
  // a^H M a with M = Qn Qn^H collapses onto charge differences d:
  // denom(theta, phi) = c_0(theta) + 2 Re sum_{d>0} c_d(theta) e^{i d phi}.
  const CMat m = noise_sub * noise_sub.adjoint();
  const int dmax = cfg.modes.back() - cfg.modes.front();
  const int top = max_abs_mode(cfg);
  const double k = cfg.wavenumbers[subcarrier];

  MusicSpectrum spec;
  spec.axis1 = theta_axis;
  spec.axis2 = phi_axis;
  spec.axis2_periodic = spans_full_period(phi_axis, 2.0 * pi);
  spec.period2 = 2.0 * pi;
  spec.values.resize(theta_axis.size(), phi_axis.size());

  const CMat phases = phase_table(phi_axis, dmax);
  std::vector<cplx> c(static_cast<std::size_t>(dmax) + 1);
  Eigen::VectorXd ju(u_count);
  for (Eigen::Index i = 0; i < theta_axis.size(); ++i) {
    const auto seq =
        bessel_jn_sequence(top, k * cfg.array_radius * std::sin(theta_axis(i)));
    for (int u = 0; u < u_count; ++u) ju(u) = signed_jl(seq, cfg.modes[u]);
    std::fill(c.begin(), c.end(), cplx{});
    for (int u = 0; u < u_count; ++u)
      for (int v = 0; v < u_count; ++v) {
        const int d = cfg.modes[v] - cfg.modes[u];
        if (d >= 0) c[d] += ju(u) * ju(v) * m(u, v);
      }
    for (Eigen::Index j = 0; j < phi_axis.size(); ++j) {
      double denom = c[0].real();
      for (int d = 1; d <= dmax; ++d)
        denom += 2.0 * (c[d] * phases(j, d - 1)).real();
      spec.values(i, j) = capped(denom, spec.saturated);
    }
  }
  return spec;
}

MusicSpectrum frequency_domain_spectrum(const OamSystemConfig& cfg,
                                        int mode_index, const CMat& noise_sub,
                                        const Eigen::VectorXd& range_axis,
                                        const Eigen::VectorXd& theta_axis) {
  validate_config(cfg);
  if (mode_index < 0 || mode_index >= cfg.num_modes())
    throw std::invalid_argument("frequency_domain_spectrum: mode out of range");
  const int w_count = cfg.num_subcarriers();
  if (noise_sub.rows() != w_count)
    throw std::invalid_argument("frequency_domain_spectrum: subspace dimension");
  if (range_axis.size() == 0 || theta_axis.size() == 0)
    throw std::invalid_argument("frequency_domain_spectrum: empty scan axis");

  const double spacing = comb_spacing(cfg);
  if (spacing == 0.0) {
    // Non-uniform comb: no shared phase progression to factorize over.
    return music_spectrum(
        noise_sub,
        [&](double r, double th) {
          return frequency_domain_steering(cfg, mode_index, r, th);
        },
        range_axis, theta_axis);
  }

  // b_w = e^{i 2 k_w r} Jt_w(theta) with Jt_w = J_l J_0 at k_w R sin theta.
  // The common phase e^{i 2 k_0 r} drops out of the norm, leaving subcarrier
  // index differences d with fundamental phase 2 * spacing * r — the
  // spectrum is periodic in range with period pi / spacing.
  const CMat m = noise_sub * noise_sub.adjoint();
  const int l = cfg.modes[mode_index];
  const int dmax = w_count - 1;
  const double period = pi / spacing;

  MusicSpectrum spec;
  spec.axis1 = range_axis;
  spec.axis2 = theta_axis;
  spec.axis1_periodic = spans_full_period(range_axis, period);
  spec.period1 = period;
  spec.values.resize(range_axis.size(), theta_axis.size());

  const CMat phases = phase_table(2.0 * spacing * range_axis, dmax);
  std::vector<cplx> c(static_cast<std::size_t>(dmax) + 1);
  Eigen::VectorXd jt(w_count);
  for (Eigen::Index j = 0; j < theta_axis.size(); ++j) {
    const double sin_th = std::sin(theta_axis(j));
    for (int w = 0; w < w_count; ++w) {
      const auto seq = bessel_jn_sequence(
          std::abs(l), cfg.wavenumbers[w] * cfg.array_radius * sin_th);
      jt(w) = signed_jl(seq, l) * seq[0];
    }
    std::fill(c.begin(), c.end(), cplx{});
    for (int u = 0; u < w_count; ++u)
      for (int v = u; v < w_count; ++v) c[v - u] += jt(u) * jt(v) * m(u, v);
    for (Eigen::Index i = 0; i < range_axis.size(); ++i) {
      double denom = c[0].real();
      for (int d = 1; d <= dmax; ++d)
        denom += 2.0 * (c[d] * phases(i, d - 1)).real();
      spec.values(i, j) = capped(denom, spec.saturated);
    }
  }
  return spec;
}

PeakList peak_search(const MusicSpectrum& spectrum, int n_peaks) {
  if (n_peaks < 0) throw std::invalid_argument("peak_search: negative count");
  const int n1 = static_cast<int>(spectrum.values.rows());
  const int n2 = static_cast<int>(spectrum.values.cols());
  const bool per1 = spectrum.axis1_periodic && n1 > 2;
  const bool per2 = spectrum.axis2_periodic && n2 > 2;

  struct Node {
    int i, j;
    double v;
  };
  std::vector<Node> maxima;
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j) {
      const double v = spectrum.values(i, j);
      bool strict = true;
      for (int di = -1; di <= 1 && strict; ++di)
        for (int dj = -1; dj <= 1 && strict; ++dj) {
          if (di == 0 && dj == 0) continue;
          int ni = i + di, nj = j + dj;
          if (ni < 0 || ni >= n1) {
            if (!per1) continue;
            ni = (ni + n1) % n1;
          }
          if (nj < 0 || nj >= n2) {
            if (!per2) continue;
            nj = (nj + n2) % n2;
          }
          strict = spectrum.values(ni, nj) < v;
        }
      if (strict) maxima.push_back({i, j, v});
    }

  // One quadratic interpolation step per axis; borders of non-periodic axes
  // are left on the node.
  const double step1 = n1 > 1 ? spectrum.axis1(1) - spectrum.axis1(0) : 0.0;
  const double step2 = n2 > 1 ? spectrum.axis2(1) - spectrum.axis2(0) : 0.0;
  auto interp = [](double vm, double v0, double vp, double step, double& apex) {
    const double curv = vm - 2.0 * v0 + vp;
    if (!(curv < 0.0)) return 0.0;
    const double frac = 0.5 * (vm - vp) / curv;
    apex += -0.25 * (vm - vp) * frac;
    return frac * step;
  };

  PeakList out;
  for (const Node& node : maxima) {
    Peak pk;
    pk.axis1 = spectrum.axis1(node.i);
    pk.axis2 = spectrum.axis2(node.j);
    pk.value = node.v;
    const int im = node.i - 1, ip = node.i + 1;
    if ((im >= 0 && ip < n1) || per1) {
      const double vm = spectrum.values((im + n1) % n1, node.j);
      const double vp = spectrum.values(ip % n1, node.j);
      pk.axis1 += interp(vm, node.v, vp, step1, pk.value);
      if (per1)
        pk.axis1 = wrap_into(pk.axis1, spectrum.axis1(0), spectrum.period1);
    }
    const int jm = node.j - 1, jp = node.j + 1;
    if ((jm >= 0 && jp < n2) || per2) {
      const double vm = spectrum.values(node.i, (jm + n2) % n2);
      const double vp = spectrum.values(node.i, jp % n2);
      pk.axis2 += interp(vm, node.v, vp, step2, pk.value);
      if (per2)
        pk.axis2 = wrap_into(pk.axis2, spectrum.axis2(0), spectrum.period2);
    }
    out.peaks.push_back(pk);
  }
  std::stable_sort(out.peaks.begin(), out.peaks.end(),
                   [](const Peak& a, const Peak& b) { return a.value > b.value; });
  if (static_cast<int>(out.peaks.size()) > n_peaks) out.peaks.resize(n_peaks);
  out.shortfall = static_cast<int>(out.peaks.size()) < n_peaks;
  return out;
}

namespace {

/// Largest pairwise distance per axis among the reference points, so axes
/// with different units weigh comparably; a degenerate spread falls back to
/// raw distances.
std::pair<double, double> reference_spreads(const std::vector<Peak>& reference,
                                            double period1, double period2) {
  double s1 = 0.0, s2 = 0.0;
  const int np = static_cast<int>(reference.size());
  for (int a = 0; a < np; ++a)
    for (int b = a + 1; b < np; ++b) {
      s1 = std::max(
          s1, axis_distance(reference[a].axis1, reference[b].axis1, period1));
      s2 = std::max(
          s2, axis_distance(reference[a].axis2, reference[b].axis2, period2));
    }
  return {s1 <= 0.0 ? 1.0 : s1, s2 <= 0.0 ? 1.0 : s2};
}

/// Greedy nearest-neighbor pairing, best global pair first, each point used
/// once.  Returns, per reference point, the matched candidate index or -1.
std::vector<int> greedy_match(const std::vector<Peak>& reference,
                              const std::vector<Peak>& candidates, double s1,
                              double s2, double period1, double period2) {
  const int np = static_cast<int>(reference.size());
  const int nc = static_cast<int>(candidates.size());
  std::vector<int> match(np, -1);
  std::vector<std::tuple<double, int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(np) * nc);
  for (int p = 0; p < np; ++p)
    for (int c = 0; c < nc; ++c) {
      const double d1 =
          axis_distance(reference[p].axis1, candidates[c].axis1, period1) / s1;
      const double d2 =
          axis_distance(reference[p].axis2, candidates[c].axis2, period2) / s2;
      pairs.emplace_back(d1 * d1 + d2 * d2, p, c);
    }
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> used_c(nc, false);
  int assigned = 0;
  const int want = std::min(np, nc);
  for (const auto& [dist, p, c] : pairs) {
    (void)dist;
    if (match[p] >= 0 || used_c[c]) continue;
    match[p] = c;
    used_c[c] = true;
    if (++assigned == want) break;
  }
  return match;
}

}  // namespace

std::vector<std::vector<Peak>> associate_peaks(
    const std::vector<Peak>& reference,
    const std::vector<std::vector<Peak>>& candidates, double period1,
    double period2) {
  const int np = static_cast<int>(reference.size());
  std::vector<std::vector<Peak>> groups(np);
  if (np == 0) return groups;
  const auto [s1, s2] = reference_spreads(reference, period1, period2);
  for (const auto& list : candidates) {
    const std::vector<int> match =
        greedy_match(reference, list, s1, s2, period1, period2);
    for (int p = 0; p < np; ++p)
      if (match[p] >= 0) groups[p].push_back(list[match[p]]);
  }
  return groups;
}

namespace {

Eigen::VectorXd inclusive_axis(double lo, double hi, double step) {
  const int n =
      std::max(2, static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1);
  Eigen::VectorXd axis(n);
  for (int i = 0; i < n; ++i) axis(i) = lo + i * step;
  return axis;
}

Eigen::VectorXd periodic_axis(double lo, double period, double step) {
  const int n = std::max(4, static_cast<int>(std::lround(period / step)));
  Eigen::VectorXd axis(n);
  for (int i = 0; i < n; ++i) axis(i) = lo + i * period / n;
  return axis;
}

/// 2 * steps + 1 nodes of width `half / steps` around `center`, optionally
/// shifted to stay inside [lo, hi].
Eigen::VectorXd local_axis(double center, double half, int steps, double lo,
                           double hi, bool clamp) {
  const double step = half / steps;
  double start = center - half;
  int n = 2 * steps + 1;
  if (clamp) {
    start = std::min(std::max(start, lo), std::max(lo, hi - 2.0 * half));
    if (start + (n - 1) * step > hi + 1e-12)
      n = std::max(2, static_cast<int>(std::floor((hi - start) / step)) + 1);
  }
  Eigen::VectorXd axis(n);
  for (int i = 0; i < n; ++i) axis(i) = start + i * step;
  return axis;
}

struct SliceState {
  CMat qn;                   ///< noise-subspace basis of this slice
  std::vector<Peak> coarse;  ///< coarse peaks, descending by strength
  bool shortfall = false;
  double strength = 0.0;  ///< covariance trace
};

Eigen::VectorXd single_node(double x) {
  Eigen::VectorXd v(1);
  v(0) = x;
  return v;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

/// Pick up to `count` peaks from a value-descending list, skipping any whose
/// selected coordinate lies within `min_sep` of an already chosen one.
/// Sidelobes of one scatterer share their reliable coordinate (azimuth in
/// the mode domain, range in the frequency domain), so separation along it
/// yields one candidate per scatterer instead of `count` copies of the
/// strongest.
std::vector<Peak> diverse_select(const std::vector<Peak>& descending,
                                 bool use_axis1, double min_sep, double period,
                                 int count) {
  std::vector<Peak> out;
  for (const Peak& p : descending) {
    if (static_cast<int>(out.size()) == count) break;
    const double x = use_axis1 ? p.axis1 : p.axis2;
    bool ok = true;
    for (const Peak& q : out)
      if (axis_distance(x, use_axis1 ? q.axis1 : q.axis2, period) < min_sep) {
        ok = false;
        break;
      }
    if (ok) out.push_back(p);
  }
  return out;
}

constexpr int kConsensusBasins = 12;

/// Two-rung consensus line search.  `line` maps an elevation axis to the
/// summed spectrum denominators over the slices of one domain; the sum is
/// scanned for strict local minima, the deepest few basins are re-probed on
/// a fine window, and the lowest probed node wins.  The true elevation dips
/// in every slice at once while single-slice sidelobes do not, so the sum
/// separates cases the per-slice spectra cannot.
template <typename LineFn>
double consensus_argmin(const Eigen::VectorXd& axis, const LineFn& line,
                        double step, double fine, double lo, double hi) {
  const Eigen::VectorXd inv = line(axis);
  const int n = static_cast<int>(axis.size());
  std::vector<int> basins;
  for (int i = 0; i < n; ++i) {
    const bool left = i == 0 || inv(i) < inv(i - 1);
    const bool right = i == n - 1 || inv(i) < inv(i + 1);
    if (left && right) basins.push_back(i);
  }
  std::sort(basins.begin(), basins.end(),
            [&](int a, int b) { return inv(a) < inv(b); });
  if (static_cast<int>(basins.size()) > kConsensusBasins)
    basins.resize(kConsensusBasins);
  double best_v = std::numeric_limits<double>::infinity();
  double best_x = axis(0);
  const int steps = std::max(1, static_cast<int>(std::lround(step / fine)));
  for (int b : basins) {
    const Eigen::VectorXd win = local_axis(axis(b), step, steps, lo, hi, true);
    const Eigen::VectorXd v = line(win);
    int k = 0;
    v.minCoeff(&k);
    if (v(k) < best_v) {
      best_v = v(k);
      best_x = win(k);
    }
  }
  return best_x;
}

}  // namespace

std::vector<PositionEstimate> estimate_positions(const OamSystemConfig& cfg,
                                                 const EchoCube& cube,
                                                 const ImagingOptions& opt) {
  validate_config(cfg);
  const int u_count = cfg.num_modes();
  const int w_count = cfg.num_subcarriers();
  if (cube.n_modes != u_count || cube.n_subcarriers != w_count)
    throw std::invalid_argument("estimate_positions: cube does not match config");
  const int qp = opt.signal_dim;
  if (qp < 1 || qp >= std::min(u_count, w_count))
    throw std::invalid_argument(
        "estimate_positions: signal dimension must be below both slice sizes");
  const ImagingGrid& g = opt.grid;

  const Eigen::VectorXd th_axis =
      inclusive_axis(g.theta_min, g.theta_max, g.angle_step);
  const bool full_phi = std::abs((g.phi_max - g.phi_min) - 2.0 * pi) < 1e-9;
  const Eigen::VectorXd ph_axis =
      full_phi ? periodic_axis(g.phi_min, 2.0 * pi, g.angle_step)
               : inclusive_axis(g.phi_min, g.phi_max, g.angle_step);

  const double spacing = comb_spacing(cfg);
  const double period = spacing > 0.0 ? pi / spacing : 0.0;
  const bool canonical =
      spacing > 0.0 && (g.range_max - g.range_min) > period + 1e-12;
  const Eigen::VectorXd r_axis =
      canonical ? periodic_axis(0.0, period, g.range_step)
                : inclusive_axis(g.range_min, g.range_max, g.range_step);

  // Refinement rungs: local polish at step / refine, elevation consensus
  // line and final polish at step / refine^2.
  const double fine1 = g.angle_step / g.refine_factor;
  const double fine2 = fine1 / g.refine_factor;
  const double rfine1 = g.range_step / g.refine_factor;
  const double rfine2 = rfine1 / g.refine_factor;
  const double line_step = 0.5 * fine1;
  const Eigen::VectorXd th_line =
      inclusive_axis(g.theta_min, g.theta_max, line_step);
  const double phi_period = full_phi ? 2.0 * pi : 0.0;
  const double r_period = canonical ? period : 0.0;

  // Stage 1: coarse per-slice scans in both domains.  Candidates are all
  // strict maxima, thinned to qp scatterer candidates by separation along
  // the slice's reliable coordinate; a slice that cannot produce qp distinct
  // candidates is a shortfall.
  const double phi_sep = 5.0 * g.angle_step;
  const double range_sep = 1.5 * g.range_step;
  std::vector<SliceState> mode_slices(w_count), freq_slices(u_count);
  for (int w = 0; w < w_count; ++w) {
    SliceState& s = mode_slices[w];
    const CMat cov = sample_covariance(cube, CovarianceSlice::kModeVector, w);
    s.strength = cov.trace().real();
    s.qn = noise_subspace(cov, qp);
    const MusicSpectrum spec =
        mode_domain_spectrum(cfg, w, s.qn, th_axis, ph_axis);
    const PeakList all =
        peak_search(spec, static_cast<int>(spec.values.size()));
    s.coarse = diverse_select(all.peaks, false, phi_sep, phi_period, qp);
    s.shortfall = static_cast<int>(s.coarse.size()) < qp;
  }
  for (int u = 0; u < u_count; ++u) {
    SliceState& s = freq_slices[u];
    const CMat cov =
        sample_covariance(cube, CovarianceSlice::kFrequencyVector, u);
    s.strength = cov.trace().real();
    s.qn = noise_subspace(cov, qp);
    const MusicSpectrum spec =
        frequency_domain_spectrum(cfg, u, s.qn, r_axis, th_axis);
    const PeakList all =
        peak_search(spec, static_cast<int>(spec.values.size()));
    s.coarse = diverse_select(all.peaks, true, range_sep, r_period, qp);
    s.shortfall = static_cast<int>(s.coarse.size()) < qp;
  }

  // Stage 2: slice-attributed association against the strongest slice of
  // each domain (the greedy pairing itself matches associate_peaks).
  const auto strongest = [](const std::vector<SliceState>& slices) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(slices.size()); ++i)
      if (slices[i].strength > slices[best].strength) best = i;
    return best;
  };
  const int w_ref = strongest(mode_slices);
  const int u_ref = strongest(freq_slices);
  const std::vector<Peak>& mref = mode_slices[w_ref].coarse;
  const std::vector<Peak>& fref = freq_slices[u_ref].coarse;
  const int np = static_cast<int>(mref.size());
  if (np == 0) return {};
  const int nf = static_cast<int>(fref.size());

  const auto [ms1, ms2] = reference_spreads(mref, 0.0, phi_period);
  const auto [fs1, fs2] = reference_spreads(fref, r_period, 0.0);
  std::vector<std::vector<int>> matched_m(w_count), matched_f(u_count);
  for (int w = 0; w < w_count; ++w)
    matched_m[w] =
        greedy_match(mref, mode_slices[w].coarse, ms1, ms2, 0.0, phi_period);
  for (int u = 0; u < u_count; ++u)
    matched_f[u] =
        greedy_match(fref, freq_slices[u].coarse, fs1, fs2, r_period, 0.0);

  // Stage 3: range locks from one joint (range, theta) map at
  // (range_step / refine, angle_step / 2) with denominators summed over the
  // mode slices.  A single low-|l| slice can alias in range by a quarter
  // period (its Bessel-amplitude sign pattern across the comb mimics a
  // quarter-turn phase ramp), but that alias moves with l while the truth is
  // shared, so the summed map pins range per scatterer.  Lock peaks map to
  // the reference peaks through range alone.
  std::vector<int> lock_of(nf, -1);
  std::vector<Peak> lock_peaks;
  {
    const Eigen::VectorXd r_lock_axis =
        canonical ? periodic_axis(0.0, period, rfine1)
                  : inclusive_axis(g.range_min, g.range_max, rfine1);
    const Eigen::VectorXd th_half =
        inclusive_axis(g.theta_min, g.theta_max, 0.5 * g.angle_step);
    MusicSpectrum comb;
    Eigen::MatrixXd inv;
    for (int u = 0; u < u_count; ++u) {
      const MusicSpectrum sp = frequency_domain_spectrum(
          cfg, u, freq_slices[u].qn, r_lock_axis, th_half);
      if (u == 0) {
        comb = sp;
        inv = sp.values.cwiseInverse();
      } else {
        inv += sp.values.cwiseInverse();
      }
    }
    comb.values = inv.cwiseInverse();
    const PeakList all =
        peak_search(comb, static_cast<int>(comb.values.size()));
    lock_peaks = diverse_select(all.peaks, true, range_sep, r_period, qp);
    if (nf > 0 && !lock_peaks.empty()) {
      std::vector<Peak> ref_r = fref, cand_r = lock_peaks;
      for (Peak& pk : ref_r) pk.axis2 = 0.0;
      for (Peak& pk : cand_r) pk.axis2 = 0.0;
      const auto [ls1, ls2] = reference_spreads(ref_r, r_period, 0.0);
      lock_of = greedy_match(ref_r, cand_r, ls1, ls2, r_period, 0.0);
    }
  }

  // Per-slice two-rung polish around a consensus elevation.  The azimuth
  // window spans half a coarse cell: azimuth locks of weak scatterers can
  // sit a few fine cells off, and the first rung must still reach the truth.
  const auto mode_polish = [&](int w, double th0, double ph0) {
    const CMat& qn = mode_slices[w].qn;
    const Eigen::VectorXd th1 =
        local_axis(th0, fine1, 5, g.theta_min, g.theta_max, true);
    const Eigen::VectorXd ph1 = local_axis(
        ph0, 0.5 * g.angle_step, 5 * g.refine_factor / 2, 0.0, 0.0, false);
    const PeakList p1 = peak_search(
        mode_domain_spectrum(cfg, w, qn, th1, ph1), 1);
    double a1 = p1.peaks.empty() ? th0 : p1.peaks[0].axis1;
    double a2 = p1.peaks.empty() ? ph0 : p1.peaks[0].axis2;
    const Eigen::VectorXd th2 =
        local_axis(a1, 4.0 * fine2, 4, g.theta_min, g.theta_max, true);
    const Eigen::VectorXd ph2 = local_axis(a2, 4.0 * fine2, 4, 0.0, 0.0, false);
    const PeakList p2 = peak_search(
        mode_domain_spectrum(cfg, w, qn, th2, ph2), 1);
    if (!p2.peaks.empty()) {
      a1 = p2.peaks[0].axis1;
      a2 = p2.peaks[0].axis2;
    }
    return std::pair<double, double>(a1, a2);
  };
  const auto freq_polish = [&](int u, double r0, double th0) {
    const CMat& qn = freq_slices[u].qn;
    const Eigen::VectorXd r1 =
        local_axis(r0, rfine1, 5, g.range_min, g.range_max, !canonical);
    const Eigen::VectorXd th1 =
        local_axis(th0, fine1, 5, g.theta_min, g.theta_max, true);
    const PeakList p1 = peak_search(
        frequency_domain_spectrum(cfg, u, qn, r1, th1), 1);
    double a1 = p1.peaks.empty() ? r0 : p1.peaks[0].axis1;
    double a2 = p1.peaks.empty() ? th0 : p1.peaks[0].axis2;
    const Eigen::VectorXd r2 =
        local_axis(a1, 4.0 * rfine2, 4, g.range_min, g.range_max, !canonical);
    const Eigen::VectorXd th2 =
        local_axis(a2, 4.0 * fine2, 4, g.theta_min, g.theta_max, true);
    const PeakList p2 = peak_search(
        frequency_domain_spectrum(cfg, u, qn, r2, th2), 1);
    if (!p2.peaks.empty()) {
      a1 = p2.peaks[0].axis1;
      a2 = p2.peaks[0].axis2;
    }
    return std::pair<double, double>(a1, a2);
  };

  // Stage 4: mode-domain refinement per reference peak.  Azimuth locks come
  // from one local polish per slice, the consensus line picks the elevation,
  // and every slice then polishes its own estimate around it.
  struct GroupEstimate {
    std::vector<int> slices;
    std::vector<double> a1, a2;  // mode: (theta, phi); freq: (range, theta)
  };
  std::vector<GroupEstimate> mode_est(np), freq_est(nf);
  for (int p = 0; p < np; ++p) {
    GroupEstimate& ge = mode_est[p];
    std::vector<double> lock_ph;
    for (int w = 0; w < w_count; ++w) {
      const int j = matched_m[w][p];
      if (j < 0) continue;
      const Peak& c = mode_slices[w].coarse[j];
      const Eigen::VectorXd th_loc =
          local_axis(c.axis1, g.angle_step, g.refine_factor, g.theta_min,
                     g.theta_max, true);
      const Eigen::VectorXd ph_loc =
          local_axis(c.axis2, g.angle_step, g.refine_factor, 0.0, 0.0, false);
      const PeakList fine = peak_search(
          mode_domain_spectrum(cfg, w, mode_slices[w].qn, th_loc, ph_loc), 1);
      ge.slices.push_back(w);
      lock_ph.push_back(fine.peaks.empty() ? c.axis2 : fine.peaks[0].axis2);
    }
    const auto line = [&](const Eigen::VectorXd& axis) {
      Eigen::VectorXd inv = Eigen::VectorXd::Zero(axis.size());
      for (std::size_t i = 0; i < ge.slices.size(); ++i)
        inv += mode_domain_spectrum(cfg, ge.slices[i],
                                    mode_slices[ge.slices[i]].qn, axis,
                                    single_node(lock_ph[i]))
                   .values.col(0)
                   .cwiseInverse();
      return inv;
    };
    const double th_star = consensus_argmin(th_line, line, line_step, fine2,
                                            g.theta_min, g.theta_max);
    for (std::size_t i = 0; i < ge.slices.size(); ++i) {
      const auto [th, ph] = mode_polish(ge.slices[i], th_star, lock_ph[i]);
      ge.a1.push_back(th);
      ge.a2.push_back(ph);
    }
  }

  // Stage 5: frequency-domain refinement per reference peak, with the
  // shared range lock in place of per-slice azimuth locks.
  for (int q = 0; q < nf; ++q) {
    GroupEstimate& ge = freq_est[q];
    const double r_star =
        lock_of[q] >= 0 ? lock_peaks[lock_of[q]].axis1 : fref[q].axis1;
    for (int u = 0; u < u_count; ++u)
      if (matched_f[u][q] >= 0) ge.slices.push_back(u);
    const auto line = [&](const Eigen::VectorXd& axis) {
      Eigen::VectorXd inv = Eigen::VectorXd::Zero(axis.size());
      for (std::size_t i = 0; i < ge.slices.size(); ++i)
        inv += frequency_domain_spectrum(cfg, ge.slices[i],
                                         freq_slices[ge.slices[i]].qn,
                                         single_node(r_star), axis)
                   .values.row(0)
                   .transpose()
                   .cwiseInverse();
      return inv;
    };
    const double th_star = consensus_argmin(th_line, line, line_step, fine2,
                                            g.theta_min, g.theta_max);
    for (std::size_t i = 0; i < ge.slices.size(); ++i) {
      const auto [r, th] = freq_polish(ge.slices[i], r_star, th_star);
      ge.a1.push_back(r);
      ge.a2.push_back(th);
    }
  }

  // Elevation is shared by both domains; pair the groups through it.
  std::vector<double> mode_theta(np), freq_theta(nf);
  for (int p = 0; p < np; ++p)
    mode_theta[p] =
        mode_est[p].a1.empty() ? mref[p].axis1 : mean_of(mode_est[p].a1);
  for (int q = 0; q < nf; ++q)
    freq_theta[q] =
        freq_est[q].a2.empty() ? fref[q].axis2 : mean_of(freq_est[q].a2);
  std::vector<int> match(np, -1);
  {
    std::vector<std::tuple<double, int, int>> pairs;
    for (int p = 0; p < np; ++p)
      for (int q = 0; q < nf; ++q)
        pairs.emplace_back(std::abs(mode_theta[p] - freq_theta[q]), p, q);
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> used_q(nf, false);
    for (const auto& [dist, p, q] : pairs) {
      (void)dist;
      if (match[p] >= 0 || used_q[q]) continue;
      match[p] = q;
      used_q[q] = true;
    }
  }

  // Stage 6: average per-slice estimates into one position per scatterer.
  std::vector<PositionEstimate> out(np);
  for (int p = 0; p < np; ++p) {
    PositionEstimate& e = out[p];
    const GroupEstimate& gm = mode_est[p];
    int ref_pos = 0;
    for (std::size_t i = 0; i < gm.slices.size(); ++i)
      if (gm.slices[i] == w_ref) ref_pos = static_cast<int>(i);
    const double phi_anchor = gm.a2.empty() ? mref[p].axis2 : gm.a2[ref_pos];
    std::vector<double> phis, thetas_m(gm.a1), ranges, thetas_f;
    for (double ph : gm.a2)
      phis.push_back(full_phi ? phi_anchor + wrap_delta(ph - phi_anchor,
                                                        2.0 * pi)
                              : ph);
    e.mode_domain_count = static_cast<int>(phis.size());
    if (match[p] >= 0) {
      const GroupEstimate& gf = freq_est[match[p]];
      int fpos = 0;
      for (std::size_t i = 0; i < gf.slices.size(); ++i)
        if (gf.slices[i] == u_ref) fpos = static_cast<int>(i);
      const double r_anchor =
          gf.a1.empty() ? fref[match[p]].axis1 : gf.a1[fpos];
      for (double r : gf.a1)
        ranges.push_back(
            canonical ? r_anchor + wrap_delta(r - r_anchor, period) : r);
      thetas_f = gf.a2;
      e.freq_domain_count = static_cast<int>(ranges.size());
    }

    std::vector<double> thetas = thetas_m;
    thetas.insert(thetas.end(), thetas_f.begin(), thetas_f.end());
    e.elevation = thetas.empty() ? mref[p].axis1 : mean_of(thetas);
    const double phi_hat = phis.empty() ? mref[p].axis2 : mean_of(phis);
    e.azimuth = wrap_into(phi_hat, 0.0, 2.0 * pi);
    e.range = ranges.empty() ? 0.0 : mean_of(ranges);
    e.theta_by_subcarrier = to_vector(thetas_m);
    e.phi_by_subcarrier = to_vector(phis);
    e.range_by_mode = to_vector(ranges);
    e.theta_by_mode = to_vector(thetas_f);
    e.shortfall = mode_slices[w_ref].shortfall ||
                  freq_slices[u_ref].shortfall ||
                  e.mode_domain_count < w_count || match[p] < 0 ||
                  e.freq_domain_count < u_count;
  }

  // A real scatterer pins its azimuth consistently in every subcarrier
  // slice; a phantom candidate (the subspace split was asked for more
  // sources than the scene holds) collects mutually inconsistent azimuth
  // locks.  Flag rows whose azimuth scatter dwarfs the strongest row's.
  const auto azimuth_dev = [](const PositionEstimate& e) {
    if (e.phi_by_subcarrier.size() == 0) return 0.0;
    const double m = e.phi_by_subcarrier.mean();
    return (e.phi_by_subcarrier.array() - m).abs().maxCoeff();
  };
  const double dev_ref = azimuth_dev(out[0]);
  for (int p = 1; p < np; ++p)
    if (azimuth_dev(out[p]) > 50.0 * std::max(dev_ref, fine2))
      out[p].shortfall = true;

  // Distinct coarse peaks that refine into the same position are one
  // scatterer seen twice (the subspace split was asked for more sources
  // than the scene holds); keep the rows but flag the shortfall.
  for (int a = 0; a < np; ++a)
    for (int b = a + 1; b < np; ++b) {
      if (std::abs(out[a].elevation - out[b].elevation) > g.angle_step)
        continue;
      if (axis_distance(out[a].azimuth, out[b].azimuth, 2.0 * pi) >
          g.angle_step)
        continue;
      out[a].shortfall = out[b].shortfall = true;
    }

  // Stage 7: absolute range.  A canonical-period scan yields folded ranges;
  // unfold each toward its best-matching coarse anchor, strongest first.
  if (canonical) {
    std::vector<bool> used(opt.range_gates.size(), false);
    for (PositionEstimate& e : out) {
      if (e.freq_domain_count == 0) continue;
      int best = -1;
      double best_dist = 0.0;
      for (std::size_t gi = 0; gi < opt.range_gates.size(); ++gi) {
        if (used[gi]) continue;
        const double d = axis_distance(opt.range_gates[gi], e.range, period);
        if (best < 0 || d < best_dist) {
          best = static_cast<int>(gi);
          best_dist = d;
        }
      }
      if (best >= 0) {
        used[best] = true;
        const double gate = opt.range_gates[best];
        e.range += period * std::round((gate - e.range) / period);
      } else {
        e.range = wrap_into(e.range, 0.0, period);
      }
    }
  }
  return out;
}

}  // namespace oamrc
