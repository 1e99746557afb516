#include "oamrc/doppler.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace oamrc {

namespace {

/// Sample interval of the cube's slow-time axis; throws unless uniform.
double slow_time_step(const EchoCube& cube) {
  if (cube.n_times < 2)
    throw std::invalid_argument("doppler: slow-time axis needs >= 2 samples");
  const double dt = cube.times[1] - cube.times[0];
  if (dt <= 0.0)
    throw std::invalid_argument("doppler: slow-time axis must increase");
  for (int i = 1; i + 1 < cube.n_times; ++i)
    if (std::abs(cube.times[i + 1] - cube.times[i] - dt) > 1e-6 * dt)
      throw std::invalid_argument("doppler: slow-time axis must be uniform");
  return dt;
}

/// Sub-bin peak position from log-magnitudes of the bin and its neighbours.
double parabolic_offset(double lo, double mid, double hi) {
  if (lo <= 0.0 || mid <= 0.0 || hi <= 0.0) return 0.0;
  const double a = std::log(lo), b = std::log(mid), c = std::log(hi);
  const double denom = a - 2.0 * b + c;
  if (denom >= -1e-300) return 0.0;  // flat or inverted: keep the bin centre
  return std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
}

struct RidgePoint {
  double freq = 0.0;
  double mag = 0.0;
};

struct PartialTrack {
  std::vector<int> frames;
  std::vector<double> freqs;
  std::vector<double> mags;

  double predict() const {
    const std::size_t n = freqs.size();
    if (n < 2) return freqs.back();
    return 2.0 * freqs[n - 1] - freqs[n - 2];
  }
};

/// In-place centered running median with edge truncation.
void median_filter(std::vector<double>& x, int length) {
  const int n = static_cast<int>(x.size());
  const int half = length / 2;
  std::vector<double> out(n);
  std::vector<double> buf;
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    buf.assign(x.begin() + lo, x.begin() + hi + 1);
    const std::size_t mid = buf.size() / 2;
    std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
    double m = buf[mid];
    if (buf.size() % 2 == 0) {
      const auto below = std::max_element(buf.begin(), buf.begin() + mid);
      m = 0.5 * (m + *below);
    }
    out[i] = m;
  }
  x.swap(out);
}

}  // namespace

Spectrogram cell_spectrogram(const EchoCube& cube, int u, int w,
                             const StftParams& params, int snapshot) {
  if (u < 0 || u >= cube.n_modes || w < 0 || w >= cube.n_subcarriers)
    throw std::invalid_argument("cell_spectrogram: cell index out of range");
  if (snapshot < 0 || snapshot >= cube.n_snapshots)
    throw std::invalid_argument("cell_spectrogram: snapshot out of range");
  if (cube.n_times < params.window_len + params.hop)
    throw std::invalid_argument(
        "cell_spectrogram: slow-time axis shorter than two analysis frames");

  StftParams scaled = params;
  scaled.sample_rate = 1.0 / slow_time_step(cube);
  std::vector<cplx> series(cube.n_times);
  for (int n = 0; n < cube.n_times; ++n) series[n] = cube.at(u, w, n, snapshot);
  return stft(series, scaled);
}

std::vector<DopplerTrack> extract_tracks(const OamSystemConfig& cfg,
                                         const EchoCube& cube, int u, int w,
                                         const TrackingOptions& opt) {
  if (cube.n_modes != cfg.num_modes() ||
      cube.n_subcarriers != cfg.num_subcarriers())
    throw std::invalid_argument("extract_tracks: cube does not match config");
  if (opt.max_tracks < 1)
    throw std::invalid_argument("extract_tracks: max_tracks must be positive");

  const Spectrogram sp = cell_spectrogram(cube, u, w, opt.stft, opt.snapshot);
  const double dt = slow_time_step(cube);
  const int frames = static_cast<int>(sp.time_s.size());
  const int bins = static_cast<int>(sp.freq_hz.size());

  const double peak = sp.magnitude.maxCoeff();
  const double gate = opt.rel_threshold * peak;
  if (!(peak > 0.0))
    throw std::invalid_argument("extract_tracks: no ridge above threshold");

  // Per-frame ridge candidates: local maxima above the gate, strongest
  // first.  Each candidate's frequency is the interpolated peak unless the
  // magnitude-weighted centroid of its neighbourhood disagrees by more than
  // a bin; that disagreement is the signature of a peak split by an
  // amplitude null inside the analysis window, and the centroid then falls
  // between the two lobes, close to the true ridge.
  std::vector<std::vector<RidgePoint>> candidates(frames);
  for (int f = 0; f < frames; ++f) {
    auto& list = candidates[f];
    for (int i = 1; i + 1 < bins; ++i) {
      const double m = sp.magnitude(i, f);
      if (m < gate || m <= sp.magnitude(i - 1, f) ||
          m < sp.magnitude(i + 1, f))
        continue;
      const double offset = parabolic_offset(
          sp.magnitude(i - 1, f), m, sp.magnitude(i + 1, f));
      const double peak_freq = sp.freq_hz[i] + offset * sp.bin_hz;

      const int lo = std::max(0, i - 8), hi = std::min(bins - 1, i + 8);
      double wsum = 0.0, fsum = 0.0;
      for (int j = lo; j <= hi; ++j) {
        const double w2 = sp.magnitude(j, f) * sp.magnitude(j, f);
        wsum += w2;
        fsum += w2 * sp.freq_hz[j];
      }
      const double centroid = fsum / wsum;
      list.push_back(
          {std::abs(centroid - peak_freq) > sp.bin_hz ? centroid : peak_freq,
           m});
    }
    std::sort(list.begin(), list.end(),
              [](const RidgePoint& a, const RidgePoint& b) {
                return a.mag > b.mag;
              });
    if (static_cast<int>(list.size()) > opt.max_tracks)
      list.resize(opt.max_tracks);
  }

  // Link candidates to the nearest linear continuation of an open track.
  // The capture radius is deliberately tight: a ridge that dips below the
  // gate is bridged by interpolation, which beats latching onto a noise
  // peak a few bins away.
  const double capture = 1.5 * sp.bin_hz;
  const int kMissLimit = std::max(1, opt.stft.window_len / opt.stft.hop);
  std::vector<PartialTrack> open;
  std::vector<int> misses;
  for (int f = 0; f < frames; ++f) {
    const auto& list = candidates[f];
    std::vector<bool> cand_used(list.size(), false);
    std::vector<bool> track_used(open.size(), false);

    struct Pair {
      double dist;
      int track;
      int cand;
    };
    std::vector<Pair> pairs;
    for (std::size_t k = 0; k < open.size(); ++k) {
      const double pred = open[k].predict();
      for (std::size_t c = 0; c < list.size(); ++c) {
        const double d = std::abs(list[c].freq - pred);
        if (d <= capture)
          pairs.push_back({d, static_cast<int>(k), static_cast<int>(c)});
      }
    }
    std::sort(pairs.begin(), pairs.end(),
              [](const Pair& a, const Pair& b) { return a.dist < b.dist; });
    for (const Pair& p : pairs) {
      if (track_used[p.track] || cand_used[p.cand]) continue;
      track_used[p.track] = cand_used[p.cand] = true;
      open[p.track].frames.push_back(f);
      open[p.track].freqs.push_back(list[p.cand].freq);
      open[p.track].mags.push_back(list[p.cand].mag);
      misses[p.track] = 0;
    }
    // A track whose prediction drifted away from every candidate for a
    // whole analysis window re-acquires the strongest leftover candidate of
    // comparable strength instead of starving for the rest of the record.
    // The strength gate keeps it from adopting the weak side-lobes that
    // stand in for a ridge buried by an amplitude null.
    for (std::size_t k = 0; k < open.size(); ++k) {
      if (track_used[k]) continue;
      if (++misses[k] < kMissLimit) continue;
      const double mean_mag =
          std::accumulate(open[k].mags.begin(), open[k].mags.end(), 0.0) /
          open[k].mags.size();
      for (std::size_t c = 0; c < list.size(); ++c) {
        if (cand_used[c] || list[c].mag < 0.5 * mean_mag) continue;
        cand_used[c] = true;
        open[k].frames.push_back(f);
        open[k].freqs.push_back(list[c].freq);
        open[k].mags.push_back(list[c].mag);
        misses[k] = 0;
        break;
      }
    }
    for (std::size_t c = 0; c < list.size(); ++c) {
      if (cand_used[c] || static_cast<int>(open.size()) >= opt.max_tracks)
        continue;
      PartialTrack t;
      t.frames.push_back(f);
      t.freqs.push_back(list[c].freq);
      t.mags.push_back(list[c].mag);
      open.push_back(std::move(t));
      misses.push_back(0);
    }
  }
  if (open.empty())
    throw std::invalid_argument("extract_tracks: no ridge above threshold");

  // Detections that are both far weaker than the track's typical strength
  // and far off the track's running trend are side-lobes or noise picked up
  // while the ridge itself was buried: an amplitude null inside one
  // analysis window splits the peak into weak side-lobes, and at low
  // signal-to-noise a stray peak can fall inside the capture radius.
  // Weak detections that sit on the trend are kept — a ridge breathing
  // through an amplitude minimum is still perfectly readable.  Dropping the
  // others lets the interpolation below bridge those frames.
  for (auto it = open.begin(); it != open.end();) {
    PartialTrack& t = *it;
    std::vector<double> sorted = t.mags;
    const std::size_t mid = sorted.size() / 2;
    std::nth_element(sorted.begin(), sorted.begin() + mid, sorted.end());
    const double weak = 0.6 * sorted[mid];
    std::vector<double> trend = t.freqs;
    median_filter(trend, 2 * std::max(opt.median_frames, 1) - 1);
    PartialTrack kept;
    for (std::size_t k = 0; k < t.mags.size(); ++k) {
      if (t.mags[k] < weak &&
          std::abs(t.freqs[k] - trend[k]) > 0.75 * sp.bin_hz)
        continue;
      kept.frames.push_back(t.frames[k]);
      kept.freqs.push_back(t.freqs[k]);
      kept.mags.push_back(t.mags[k]);
    }
    if (kept.frames.empty()) {
      it = open.erase(it);
    } else {
      t = std::move(kept);
      ++it;
    }
  }
  if (open.empty())
    throw std::invalid_argument("extract_tracks: no ridge above threshold");

  // Strongest ridge first; strength is the mean detected magnitude.
  std::sort(open.begin(), open.end(),
            [](const PartialTrack& a, const PartialTrack& b) {
              const double sa =
                  std::accumulate(a.mags.begin(), a.mags.end(), 0.0) /
                  a.mags.size();
              const double sb =
                  std::accumulate(b.mags.begin(), b.mags.end(), 0.0) /
                  b.mags.size();
              return sa > sb;
            });

  // Frames where the ridge dipped below the gate inherit the linear
  // interpolation of their detected neighbours, so each track covers every
  // frame between its first and last detection.
  const double t0 = cube.times.front() + 0.5 * (opt.stft.window_len - 1) * dt;
  std::vector<DopplerTrack> out;
  for (const PartialTrack& t : open) {
    DopplerTrack tr;
    tr.mode = cfg.modes[u];
    tr.subcarrier = w;
    for (std::size_t k = 0; k + 1 < t.frames.size(); ++k) {
      const int f0 = t.frames[k], f1 = t.frames[k + 1];
      for (int f = f0; f < f1; ++f) {
        const double a =
            static_cast<double>(f - f0) / static_cast<double>(f1 - f0);
        tr.times.push_back(t0 + f * opt.stft.hop * dt);
        tr.frequencies.push_back((1.0 - a) * t.freqs[k] + a * t.freqs[k + 1]);
      }
    }
    tr.times.push_back(t0 + t.frames.back() * opt.stft.hop * dt);
    tr.frequencies.push_back(t.freqs.back());
    if (opt.median_frames > 1) median_filter(tr.frequencies, opt.median_frames);
    out.push_back(std::move(tr));
  }
  return out;
}

DopplerTrack rotational_component(const DopplerTrack& signal,
                                  const DopplerTrack& reference) {
  if (signal.mode == 0)
    throw std::invalid_argument(
        "rotational_component: signal track has charge 0");
  if (reference.mode != 0)
    throw std::invalid_argument(
        "rotational_component: reference track must have charge 0");
  if (signal.subcarrier != reference.subcarrier)
    throw std::invalid_argument(
        "rotational_component: tracks belong to different subcarriers");
  if (signal.times.size() != reference.times.size())
    throw std::invalid_argument(
        "rotational_component: tracks differ in length");
  for (std::size_t i = 0; i < signal.times.size(); ++i)
    if (std::abs(signal.times[i] - reference.times[i]) > 1e-9)
      throw std::invalid_argument(
          "rotational_component: tracks do not share a time axis");

  DopplerTrack out = signal;
  for (std::size_t i = 0; i < out.frequencies.size(); ++i)
    out.frequencies[i] -= reference.frequencies[i];
  return out;
}

SpinEstimate estimate_spin(const std::vector<DopplerTrack>& rotational,
                           const SpinOptions& opt) {
  if (rotational.empty())
    throw std::invalid_argument("estimate_spin: no tracks given");

  SpinEstimate est;
  bool any_short = false;
  for (const DopplerTrack& tr : rotational) {
    if (tr.mode == 0)
      throw std::invalid_argument("estimate_spin: charge-0 track in input");
    const std::size_t n = tr.times.size();
    if (n != tr.frequencies.size())
      throw std::invalid_argument("estimate_spin: track lengths disagree");
    if (n < 8)
      throw std::invalid_argument("estimate_spin: track too short to analyse");
    const double dt = (tr.times.back() - tr.times.front()) / double(n - 1);
    if (dt <= 0.0)
      throw std::invalid_argument("estimate_spin: track times must increase");
    for (std::size_t i = 0; i + 1 < n; ++i)
      if (std::abs(tr.times[i + 1] - tr.times[i] - dt) > 1e-6 * dt)
        throw std::invalid_argument(
            "estimate_spin: track times must be uniformly spaced");

    std::vector<double> x(n);
    double mean = 0.0;
    for (double f : tr.frequencies) mean += f;
    mean /= double(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = tr.frequencies[i] - mean;

    if (opt.smooth_frames > 1) {
      const int half = opt.smooth_frames / 2;
      std::vector<double> sm(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= std::size_t(half) ? i - half : 0;
        const std::size_t hi = std::min(n - 1, i + half);
        double s = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) s += x[j];
        sm[i] = s / double(hi - lo + 1);
      }
      x.swap(sm);
    }

    std::vector<double> acf(n - 1, 0.0);
    for (std::size_t k = 0; k < n - 1; ++k)
      for (std::size_t i = 0; i + k < n; ++i) acf[k] += x[i] * x[i + k];
    if (acf[0] <= 0.0) continue;  // constant track: no modulation at all

    // Candidate peaks beyond the correlated-jitter range.  After removing
    // the lag taper, a periodic signal's peaks at one, two, three periods
    // all have the same height, so the raw maximum lands on a multiple
    // whenever noise nudges it; the fundamental is the smallest lag whose
    // corrected height is close to the best.  Peaks past half the record
    // cannot be multiples and their taper correction amplifies noise, so
    // they only serve as a fallback — that is the sub-two-period case
    // caught below.
    // Lags past three quarters of the record are excluded outright: there
    // the taper correction amplifies leakage ripples beyond any genuine
    // peak, and a period that long could never satisfy the span check.
    auto unbiased = [&](int k) { return acf[k] * double(n) / double(n - k); };
    const std::size_t k_min = std::max(1, opt.min_period_lags);
    const std::size_t k_cap = std::min(acf.size() - 2, 3 * n / 4);
    std::vector<int> peaks;
    int tallest = -1;
    for (std::size_t k = k_min; k <= k_cap; ++k)
      if (acf[k] > acf[k - 1] && acf[k] >= acf[k + 1] && acf[k] > 0.0) {
        peaks.push_back(static_cast<int>(k));
        if (tallest < 0 || unbiased(static_cast<int>(k)) > unbiased(tallest))
          tallest = static_cast<int>(k);
      }
    int best = -1;
    if (tallest >= 0) {
      for (int k : peaks)
        if (k <= static_cast<int>(n / 2) &&
            unbiased(k) >= 0.85 * unbiased(tallest)) {
          best = k;
          break;
        }
      // No comparable peak in the multiple-bearing range: the period
      // exceeds half the record (the sub-two-period case caught below).
      if (best < 0) best = tallest;
    }
    if (best < 0) continue;
    // Periodicity gate.  Beyond half the record the lag taper suppresses
    // even a clean track's peak (a 1.6-period cosine scores 0.38), so the
    // sub-two-period candidates are judged on the taper-corrected value;
    // they only need to be told apart from no modulation at all, since the
    // span check below excludes them anyway.
    const double ratio = best > static_cast<int>(n / 2)
                             ? unbiased(best) / acf[0]
                             : acf[best] / acf[0];
    if (ratio < opt.periodicity_threshold) continue;

    // Refine on the taper-corrected values so the peak is not dragged
    // toward shorter lags.
    const double lo = unbiased(best - 1), mid = unbiased(best),
                 hi = unbiased(best + 1);
    const double denom = lo - 2.0 * mid + hi;
    double delta = 0.0;
    if (denom < 0.0) delta = std::clamp(0.5 * (lo - hi) / denom, -0.5, 0.5);
    const double period = (best + delta) * dt;

    if (tr.times.back() - tr.times.front() < opt.min_periods * period) {
      any_short = true;
      est.excluded.push_back(tr.mode);
      continue;
    }
    est.modes.push_back(tr.mode);
    est.periods.push_back(period);
    est.per_mode.push_back(2.0 * std::numbers::pi / period);
  }

  if (est.per_mode.empty()) {
    if (any_short)
      throw std::invalid_argument(
          "estimate_spin: every periodic track spans fewer than the required "
          "number of rotation periods");
    est.stationary = true;
    est.spin = 0.0;
    return est;
  }

  // Every charge observes the same rotation, so the per-charge periods must
  // agree.  A track dominated by residual artefacts can still clear the
  // periodicity gate with an unrelated period, but such readings scatter
  // while genuine ones cluster.  Keep the largest cluster of mutually
  // consistent periods; ties go to the cluster holding the higher charge,
  // whose frequency swing is the strongest and therefore most trustworthy.
  if (est.periods.size() > 1) {
    const std::size_t n_read = est.periods.size();
    std::size_t anchor = 0;
    int best_count = -1, best_charge = -1;
    for (std::size_t i = 0; i < n_read; ++i) {
      int count = 0, top = 0;
      for (std::size_t j = 0; j < n_read; ++j) {
        if (std::abs(est.periods[j] - est.periods[i]) > 0.2 * est.periods[i])
          continue;
        ++count;
        top = std::max(top, std::abs(est.modes[j]));
      }
      if (count > best_count ||
          (count == best_count && top > best_charge)) {
        best_count = count;
        best_charge = top;
        anchor = i;
      }
    }
    const double ref = est.periods[anchor];
    std::size_t keep = 0;
    for (std::size_t i = 0; i < n_read; ++i) {
      if (std::abs(est.periods[i] - ref) > 0.2 * ref) {
        est.excluded.push_back(est.modes[i]);
        continue;
      }
      est.modes[keep] = est.modes[i];
      est.periods[keep] = est.periods[i];
      est.per_mode[keep] = est.per_mode[i];
      ++keep;
    }
    est.modes.resize(keep);
    est.periods.resize(keep);
    est.per_mode.resize(keep);
  }

  est.spin = std::accumulate(est.per_mode.begin(), est.per_mode.end(), 0.0) /
             double(est.per_mode.size());
  return est;
}

namespace {

/// Restrict two tracks to their shared time instants (same frame grid, so
/// shared instants match exactly up to rounding).
std::pair<DopplerTrack, DopplerTrack> align_tracks(const DopplerTrack& a,
                                                   const DopplerTrack& b) {
  DopplerTrack ra, rb;
  ra.mode = a.mode;
  ra.subcarrier = a.subcarrier;
  rb.mode = b.mode;
  rb.subcarrier = b.subcarrier;
  std::size_t i = 0, j = 0;
  while (i < a.times.size() && j < b.times.size()) {
    const double d = a.times[i] - b.times[j];
    if (std::abs(d) <= 1e-9) {
      ra.times.push_back(a.times[i]);
      ra.frequencies.push_back(a.frequencies[i]);
      rb.times.push_back(a.times[i]);
      rb.frequencies.push_back(b.frequencies[j]);
      ++i;
      ++j;
    } else if (d < 0.0) {
      ++i;
    } else {
      ++j;
    }
  }
  return {std::move(ra), std::move(rb)};
}

double oscillation_power(const DopplerTrack& t) {
  double mean = 0.0;
  for (double f : t.frequencies) mean += f;
  mean /= double(t.frequencies.size());
  double s = 0.0;
  for (double f : t.frequencies) s += (f - mean) * (f - mean);
  return s / double(t.frequencies.size());
}

}  // namespace

std::vector<DopplerTrack> rotational_tracks(const OamSystemConfig& cfg,
                                            const EchoCube& cube,
                                            int subcarrier,
                                            const TrackingOptions& opt) {
  int u0 = -1;
  for (int u = 0; u < cfg.num_modes(); ++u)
    if (cfg.modes[u] == 0) u0 = u;
  if (u0 < 0)
    throw std::invalid_argument(
        "rotational_tracks: the mode set must contain charge 0");

  const auto ref_tracks = extract_tracks(cfg, cube, u0, subcarrier, opt);
  const DopplerTrack& ref = ref_tracks.front();

  std::vector<DopplerTrack> rotational;
  for (int u = 0; u < cfg.num_modes(); ++u) {
    if (u == u0) continue;
    // A cell whose ridge never clears the gate is simply absent here: the
    // remaining charges still carry the rotation.
    std::vector<DopplerTrack> tracks;
    try {
      tracks = extract_tracks(cfg, cube, u, subcarrier, opt);
    } catch (const std::invalid_argument&) {
      continue;
    }
    DopplerTrack best;
    double best_power = -1.0;
    for (const DopplerTrack& cand : tracks) {
      auto [sig, anchor] = align_tracks(cand, ref);
      if (sig.times.size() < 8) continue;
      DopplerTrack rot = rotational_component(sig, anchor);
      const double p = oscillation_power(rot);
      if (p > best_power) {
        best_power = p;
        best = std::move(rot);
      }
    }
    if (best_power >= 0.0) rotational.push_back(std::move(best));
  }
  if (rotational.empty())
    throw std::invalid_argument(
        "rotational_tracks: no nonzero-charge track overlaps the reference");
  return rotational;
}

SpinEstimate spin_from_cube(const OamSystemConfig& cfg, const EchoCube& cube,
                            int subcarrier, const TrackingOptions& topt,
                            const SpinOptions& sopt) {
  return estimate_spin(rotational_tracks(cfg, cube, subcarrier, topt), sopt);
}

SpinEstimate spin_from_cube_pooled(const OamSystemConfig& cfg,
                                   const EchoCube& cube,
                                   const TrackingOptions& topt,
                                   const SpinOptions& sopt) {
  std::vector<DopplerTrack> pooled;
  for (int w = 0; w < cfg.num_subcarriers(); ++w) {
    try {
      auto tracks = rotational_tracks(cfg, cube, w, topt);
      pooled.insert(pooled.end(), std::make_move_iterator(tracks.begin()),
                    std::make_move_iterator(tracks.end()));
    } catch (const std::invalid_argument&) {
      // This subcarrier gave nothing trackable; the others may still.
    }
  }
  if (pooled.empty())
    throw std::invalid_argument(
        "spin_from_cube_pooled: no subcarrier yielded a rotational track");
  return estimate_spin(pooled, sopt);
}

}  // namespace oamrc
