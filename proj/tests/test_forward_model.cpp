#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <oamrc/forward_model.hpp>
#include <oamrc/numerics.hpp>
#include <oamrc/scene.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

using namespace oamrc;
using std::numbers::pi;

namespace {

// Signed-order Bessel via the standard library, for test-side references.
double jl_ref(int l, double x) {
  const int n = std::abs(l);
  double v = std::cyl_bessel_j(static_cast<double>(n), std::abs(x));
  if (l < 0 && (n & 1)) v = -v;
  if (x < 0 && (n & 1)) v = -v;
  return v;
}

OamSystemConfig small_config() {
  OamSystemConfig cfg;
  cfg.n_elements = 17;
  cfg.array_radius = 30.0 * 2.0 * pi / 209.0;
  cfg.modes = {-2, -1, 0, 1, 3};
  cfg.wavenumbers = {209.0, 210.0, 211.0};
  return cfg;
}

std::vector<TargetState> small_scene() {
  TargetState t;
  t.range0 = 82.5;
  t.elev0 = 20.0 * pi / 180.0;
  t.azim0 = 70.0 * pi / 180.0;
  t.spin = 8.0 * pi;
  t.half_angle = 0.3;
  ScattererState centroid;
  centroid.rcs_mean = 1.0;
  ScattererState vertex;
  vertex.role = ScattererRole::kVertex;
  vertex.radial_offset = 4.0;
  vertex.phase0 = 0.7;
  vertex.rcs_mean = 0.8;
  t.scatterers = {centroid, vertex};

  TargetState t2;
  t2.range0 = 121.0;
  t2.elev0 = 55.0 * pi / 180.0;
  t2.azim0 = 200.0 * pi / 180.0;
  ScattererState c2;
  c2.rcs_mean = 0.6;
  t2.scatterers = {c2};
  return {t, t2};
}

// Brute-force compensated echo entry straight from the physics sum.
cplx echo_entry_ref(const OamSystemConfig& cfg,
                    const std::vector<TargetState>& targets, int u, int w,
                    double time) {
  const int l = cfg.modes[u];
  const double k = cfg.wavenumbers[w];
  cplx acc(0, 0);
  for (const auto& t : targets) {
    for (const auto& sc : t.scatterers) {
      const Spherical s = to_spherical(scatterer_position(t, sc, time));
      const double x = k * cfg.array_radius * std::sin(s.theta);
      acc += sc.rcs_mean * std::polar(1.0, 2.0 * k * s.r) / (s.r * s.r) *
             std::polar(1.0, l * s.phi) * jl_ref(l, x) * jl_ref(0, x);
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("element sum over a dense ring reduces to the Bessel steering law") {
  // sum_m exp(i l phi_m) exp(-i x cos(phi - phi_m)) == M i^{-l} J_l(x) e^{i l phi}
  // up to alias orders J_{l +- M}; with M = 64 and x <= 3 those are < 1e-60.
  const int m_count = 64;
  for (const int l : {-3, -1, 0, 2}) {
    for (const double x : {0.5, 2.8}) {
      for (const double phi : {0.3, 4.0}) {
        cplx sum(0, 0);
        for (int m = 0; m < m_count; ++m) {
          const double phim = 2.0 * pi * m / m_count;
          sum += std::polar(1.0, l * phim) *
                 std::polar(1.0, -x * std::cos(phi - phim));
        }
        const cplx twist = std::pow(cplx(0, 1), ((-l % 4) + 4) % 4);
        const cplx ref = double(m_count) * twist * jl_ref(l, x) *
                         std::polar(1.0, l * phi);
        CHECK(std::abs(sum - ref) <= 1e-10 * m_count);
      }
    }
  }
}

TEST_CASE("mode_domain_steering entries follow exp(il phi) J_l") {
  const OamSystemConfig cfg = small_config();
  for (const int w : {0, 2}) {
    for (const auto [theta, phi] : {std::pair{0.35, 1.22}, {1.40, 5.9}}) {
      const CVec a = mode_domain_steering(cfg, w, theta, phi);
      REQUIRE(a.size() == 5);
      for (int u = 0; u < 5; ++u) {
        const int l = cfg.modes[u];
        const double x = cfg.wavenumbers[w] * cfg.array_radius * std::sin(theta);
        const cplx ref = std::polar(1.0, l * phi) * jl_ref(l, x);
        CHECK(std::abs(a(u) - ref) <= 1e-10);
      }
    }
  }
}

TEST_CASE("frequency_domain_steering entries follow exp(2ikr) J_l J_0") {
  const OamSystemConfig cfg = small_config();
  for (const int u : {0, 3}) {
    for (const auto [r, theta] : {std::pair{82.5, 0.35}, {150.2, 1.1}}) {
      const CVec b = frequency_domain_steering(cfg, u, r, theta);
      REQUIRE(b.size() == 3);
      for (int w = 0; w < 3; ++w) {
        const double k = cfg.wavenumbers[w];
        const double x = k * cfg.array_radius * std::sin(theta);
        const cplx ref = std::polar(1.0, 2.0 * k * r) * jl_ref(cfg.modes[u], x) *
                         jl_ref(0, x);
        CHECK(std::abs(b(w) - ref) <= 1e-10);
      }
    }
  }
}

TEST_CASE("range steering is periodic in pi for unit-spaced wavenumbers") {
  OamSystemConfig cfg = small_config();
  const CVec b0 = frequency_domain_steering(cfg, 1, 100.0, 0.6);
  const CVec b1 = frequency_domain_steering(cfg, 1, 100.0 + pi, 0.6);
  // exp(2ik(r+pi)) = exp(2ikr) exp(2i pi k): integer k -> identical entries.
  CHECK((b0 - b1).norm() <= 1e-9 * b0.norm());
}

TEST_CASE("noise_free_echo matches the brute-force physics sum") {
  const OamSystemConfig cfg = small_config();
  const auto targets = small_scene();
  for (const double time : {0.0, 0.037}) {
    const CMat e = noise_free_echo(cfg, targets, time);
    REQUIRE(e.rows() == 5);
    REQUIRE(e.cols() == 3);
    for (int u = 0; u < 5; ++u)
      for (int w = 0; w < 3; ++w) {
        const cplx ref = echo_entry_ref(cfg, targets, u, w, time);
        CHECK(std::abs(e(u, w) - ref) <= 1e-12 + 1e-9 * std::abs(ref));
      }
  }
}

TEST_CASE("compensation inverts the transmit factors exactly") {
  OamSystemConfig cfg = small_config();
  cfg.gain = 3.7e4;
  const auto targets = small_scene();
  WeightVector w;
  w.amplitudes = Eigen::VectorXd(5);
  w.amplitudes << 0.3, 0.5, 0.4, 0.6, std::sqrt(1.0 - 0.86);
  REQUIRE(weights_normalized(w));

  const CMat raw = raw_echo(cfg, targets, w, 0.01);
  const CMat comp = compensate_echo(cfg, raw, w);
  const CMat ref = noise_free_echo(cfg, targets, 0.01);
  CHECK((comp - ref).norm() <= 1e-10 * ref.norm());

  // The raw entries really carry gain * weight * i^{-l}.
  for (int u = 0; u < 5; ++u) {
    const cplx twist = std::pow(cplx(0, 1), ((-cfg.modes[u] % 4) + 4) % 4);
    for (int ww = 0; ww < 3; ++ww) {
      const cplx expect = cfg.gain * w.amplitudes(u) * twist * ref(u, ww);
      CHECK(std::abs(raw(u, ww) - expect) <= 1e-12 * std::abs(expect) + 1e-18);
    }
  }
}

TEST_CASE("compensation refuses silent modes") {
  OamSystemConfig cfg = small_config();
  WeightVector w;
  w.amplitudes = Eigen::VectorXd(5);
  w.amplitudes << 0.0, 0.5, 0.5, 0.5, 0.5;
  CMat raw = CMat::Zero(5, 3);
  CHECK_THROWS_AS(compensate_echo(cfg, raw, w), std::invalid_argument);
}

TEST_CASE("synthesize_echo is deterministic per seed and varies across trials") {
  OamSystemConfig cfg = small_config();
  const auto targets = small_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  const WeightVector w = uniform_weights(5);
  SynthesisParams p;
  p.snr_db = 10.0;
  p.times = {0.0, 0.001, 0.002};
  p.snapshots = 4;
  p.seed = 77;
  p.trial = 3;

  const EchoCube a = synthesize_echo(cfg, targets, w, p);
  const EchoCube b = synthesize_echo(cfg, targets, w, p);
  REQUIRE(a.data.size() == b.data.size());
  REQUIRE(a.data.size() == std::size_t(5 * 3 * 3 * 4));
  double diff = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    diff = std::max(diff, std::abs(a.data[i] - b.data[i]));
  CHECK(diff == 0.0);

  SynthesisParams q = p;
  q.trial = 4;
  const EchoCube c = synthesize_echo(cfg, targets, w, q);
  double delta = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    delta = std::max(delta, std::abs(a.data[i] - c.data[i]));
  CHECK(delta > 1e-12);
}

TEST_CASE("synthesized power budget matches the analytic expectation") {
  OamSystemConfig cfg = small_config();
  const auto targets = small_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  const WeightVector w = uniform_weights(5);
  SynthesisParams p;
  p.snr_db = 5.0;
  p.times = {0.0};
  p.snapshots = 4000;
  p.seed = 123;

  const EchoCube cube = synthesize_echo(cfg, targets, w, p);
  const CMat det = noise_free_echo(cfg, targets, 0.0);
  const double xi2 = std::pow(10.0, -p.snr_db / 10.0);
  for (int u = 0; u < 5; ++u)
    for (int ww = 0; ww < 3; ++ww) {
      double mean_power = 0;
      cplx mean(0, 0);
      for (int l = 0; l < p.snapshots; ++l) {
        mean_power += std::norm(cube.at(u, ww, 0, l));
        mean += cube.at(u, ww, 0, l);
      }
      mean_power /= p.snapshots;
      mean /= p.snapshots;
      // Scattering amplitudes are zero-mean draws, so entries are zero-mean
      // with power = sum_s rcs^2 |contrib|^2 + noise/(gain * weight)^2.
      double sig = 0;
      for (const auto& t : targets)
        for (std::size_t s = 0; s < t.scatterers.size(); ++s) {
          auto one = t;
          for (std::size_t j = 0; j < one.scatterers.size(); ++j)
            one.scatterers[j].rcs_mean = (j == s) ? t.scatterers[j].rcs_mean : 0.0;
          sig += std::norm(noise_free_echo(cfg, {one}, 0.0)(u, ww));
        }
      const double nv =
          xi2 / std::pow(cfg.gain * w.amplitudes(u), 2);
      const double expect = sig + nv;
      CHECK(mean_power == doctest::Approx(expect).epsilon(0.08));
      CHECK(std::abs(mean) <= 3.0 * std::sqrt(expect / p.snapshots));
    }
}

TEST_CASE("calibrate_gain pins mean raw power to one at uniform weights") {
  OamSystemConfig cfg = small_config();
  const auto targets = small_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  CHECK(cfg.gain > 0.0);
  const CMat raw = raw_echo(cfg, targets, uniform_weights(5), 0.0);
  CHECK(raw.array().abs2().mean() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("element_channel has constant magnitude and collapses on the axis") {
  OamSystemConfig cfg = small_config();
  cfg.comm_gain = 2.5;
  const CVec h = element_channel(cfg, 1, 82.5, 0.35, 1.2);
  REQUIRE(h.size() == cfg.n_elements);
  const double expect_mag = 2.5 / (2.0 * cfg.wavenumbers[1] * 82.5);
  for (int m = 0; m < cfg.n_elements; ++m)
    CHECK(std::abs(h(m)) == doctest::Approx(expect_mag).epsilon(1e-12));

  // On the array axis every element sees the same path: identical entries.
  const CVec h0 = element_channel(cfg, 1, 82.5, 0.0, 1.2);
  for (int m = 1; m < cfg.n_elements; ++m)
    CHECK(std::abs(h0(m) - h0(0)) <= 1e-15);
}

TEST_CASE("mode_channel equals the element sum and the alias-free Bessel form") {
  OamSystemConfig cfg = small_config();
  const int w = 2;
  const double r = 95.0, theta = 0.8, phi = 2.1;
  const CVec h = element_channel(cfg, w, r, theta, phi);
  const CVec d = mode_channel(cfg, w, r, theta, phi);
  REQUIRE(d.size() == 5);
  for (int u = 0; u < 5; ++u) {
    cplx sum(0, 0);
    for (int m = 0; m < cfg.n_elements; ++m)
      sum += h(m) * std::polar(1.0, cfg.modes[u] * 2.0 * pi * m / cfg.n_elements);
    CHECK(std::abs(d(u) - sum) <= 1e-12 * std::abs(sum) + 1e-15);
  }

  // Dense ring at small kR: the sum collapses to
  // M (gain/2kr) e^{-ikr} i^{-l} J_l(kR sin th) e^{-il phi}.
  OamSystemConfig fine = cfg;
  fine.n_elements = 64;
  fine.array_radius = 0.01;
  const CVec dd = mode_channel(fine, w, r, theta, phi);
  for (int u = 0; u < 5; ++u) {
    const int l = fine.modes[u];
    const double k = fine.wavenumbers[w];
    const double x = k * fine.array_radius * std::sin(theta);
    const cplx twist = std::pow(cplx(0, 1), ((-l % 4) + 4) % 4);
    const cplx ref = double(fine.n_elements) / (2.0 * k * r) *
                     std::polar(1.0, -k * r) * twist * jl_ref(l, x) *
                     std::polar(1.0, -l * phi);
    CHECK(std::abs(dd(u) - ref) <= 1e-9 * std::abs(ref) + 1e-12);
  }
}

TEST_CASE("calibrate_comm_gain pins the mean mode-channel power") {
  OamSystemConfig cfg = small_config();
  const double r = 82.5, theta = 0.35, phi = 1.2;
  const double base = calibrate_comm_gain(cfg, r, theta, phi, 0.25);
  cfg.comm_gain = base;
  double acc = 0;
  for (int w = 0; w < cfg.num_subcarriers(); ++w)
    acc += mode_channel(cfg, w, r, theta, phi).squaredNorm();
  acc /= cfg.num_modes() * cfg.num_subcarriers();
  CHECK(acc == doctest::Approx(0.25).epsilon(1e-10));
}

TEST_CASE("config and weight validation reject malformed input") {
  OamSystemConfig cfg = small_config();
  CHECK_NOTHROW(validate_config(cfg));

  OamSystemConfig bad = cfg;
  bad.modes = {};
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = cfg;
  bad.modes = {0, 0, 1};
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = cfg;
  bad.modes = {0, 9};  // 17 elements cannot sample charge 9
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = cfg;
  bad.array_radius = -1.0;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  bad = cfg;
  bad.wavenumbers = {209.0, 208.0};
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);

  const WeightVector u5 = uniform_weights(5);
  CHECK(weights_normalized(u5));
  CHECK_NOTHROW(validate_weights(cfg, u5));
  WeightVector short_w;
  short_w.amplitudes = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_AS(validate_weights(cfg, short_w), std::invalid_argument);
  WeightVector denorm;
  denorm.amplitudes = Eigen::VectorXd::Ones(5);
  CHECK_THROWS_AS(validate_weights(cfg, denorm), std::invalid_argument);
  WeightVector neg = u5;
  neg.amplitudes(0) = -neg.amplitudes(0);
  CHECK(!weights_normalized(neg));
}

TEST_CASE("echo cube indexing round-trips") {
  EchoCube c;
  c.n_modes = 2;
  c.n_subcarriers = 3;
  c.n_times = 4;
  c.n_snapshots = 5;
  c.data.assign(2 * 3 * 4 * 5, cplx(0, 0));
  c.at(1, 2, 3, 4) = cplx(7, -1);
  CHECK(c.data[c.index(1, 2, 3, 4)] == cplx(7, -1));
  CHECK(c.index(0, 0, 0, 1) == 1);
  CHECK(c.index(0, 0, 1, 0) == 5);
  CHECK(c.index(0, 1, 0, 0) == 20);
  CHECK(c.index(1, 0, 0, 0) == 60);
}
