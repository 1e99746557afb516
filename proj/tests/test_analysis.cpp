#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <oamrc/analysis.hpp>
#include <oamrc/forward_model.hpp>
#include <oamrc/numerics.hpp>
#include <oamrc/scene.hpp>

#include <cmath>
#include <numbers>
#include <vector>

using namespace oamrc;
using std::numbers::pi;

namespace {

OamSystemConfig test_config() {
  OamSystemConfig cfg;
  cfg.n_elements = 17;
  cfg.array_radius = 30.0 * 2.0 * pi / 209.0;
  cfg.modes = {-3, -1, 0, 2, 4};
  cfg.wavenumbers = {209.0, 210.0, 211.0, 212.0};
  return cfg;
}

std::vector<TargetState> spin_scene() {
  TargetState t;
  t.range0 = 82.5;
  t.elev0 = 20.0 * pi / 180.0;
  t.azim0 = 70.0 * pi / 180.0;
  t.spin = 8.0 * pi;
  t.half_angle = 0.4;
  ScattererState c;
  ScattererState v;
  v.role = ScattererRole::kVertex;
  v.radial_offset = 3.0;
  v.phase0 = 0.4;
  v.rcs_mean = 0.9;
  ScattererState b;
  b.role = ScattererRole::kBody;
  b.radial_offset = 1.5;
  b.phase0 = 2.5;
  b.rcs_mean = 0.6;
  t.scatterers = {c, v, b};

  TargetState t2;
  t2.range0 = 121.0;
  t2.elev0 = 62.0 * pi / 180.0;
  t2.azim0 = 205.0 * pi / 180.0;
  t2.spin = 10.0 * pi;
  t2.half_angle = 0.3;
  ScattererState c2;
  c2.rcs_mean = 0.7;
  ScattererState v2;
  v2.role = ScattererRole::kVertex;
  v2.radial_offset = 2.0;
  v2.phase0 = 1.1;
  v2.rcs_mean = 0.5;
  t2.scatterers = {c2, v2};
  return {t, t2};
}

WeightVector skewed_weights() {
  WeightVector w;
  w.amplitudes = Eigen::VectorXd(5);
  w.amplitudes << 0.25, 0.55, 0.35, 0.45, 0.0;
  w.amplitudes(4) = std::sqrt(1.0 - w.amplitudes.squaredNorm());
  return w;
}

double fd_step(ParamKind k) {
  switch (k) {
    case ParamKind::kRange: return 1e-6;
    case ParamKind::kElevation: return 1e-6;
    case ParamKind::kAzimuth: return 1e-6;
    default: return 1e-5;
  }
}

}  // namespace

TEST_CASE("echo model at the reference equals the synthesized raw echo") {
  OamSystemConfig cfg = test_config();
  const auto targets = spin_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  const WeightVector w = skewed_weights();
  const EchoModel model(cfg, targets, w);
  const Eigen::VectorXd ref = model.reference();
  REQUIRE(ref.size() == 8);
  CHECK(ref(0) == doctest::Approx(82.5));
  CHECK(ref(3) == doctest::Approx(8.0 * pi));
  CHECK(ref(4) == doctest::Approx(121.0));

  for (const double t : {0.0, 0.0123, 0.087}) {
    const CMat direct = raw_echo(cfg, targets, w, t);
    const CMat modeled = model.value(ref, t);
    CHECK((modeled - direct).norm() <= 1e-11 * direct.norm());
  }
}

TEST_CASE("analytic derivatives match central differences") {
  OamSystemConfig cfg = test_config();
  const auto targets = spin_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  const EchoModel model(cfg, targets, skewed_weights());
  Eigen::VectorXd p = model.reference();

  for (const bool off_reference : {false, true}) {
    if (off_reference) {
      // The model family is self-consistent away from the truth too.
      p(0) += 0.4;
      p(1) -= 0.01;
      p(2) += 0.02;
      p(3) *= 1.05;
      p(5) += 0.015;
    }
    for (const double t : {0.0, 0.031}) {
      for (int i = 0; i < model.num_params(); ++i) {
        const double h = fd_step(model.param(i).kind);
        Eigen::VectorXd hi = p, lo = p;
        hi(i) += h;
        lo(i) -= h;
        const CMat fd = (model.value(hi, t) - model.value(lo, t)) / (2 * h);
        const CMat an = model.derivative(p, i, t);
        const double scale = std::max(an.norm(), 1e-30);
        if (an.norm() == 0.0) {
          CHECK(fd.norm() <= 1e-12);  // spin at t = 0 has no leverage
        } else {
          CHECK((an - fd).norm() / scale <= 2e-6);
        }
      }
    }
  }
}

TEST_CASE("fisher matrix is symmetric, PSD, and scales with noise power") {
  OamSystemConfig cfg = test_config();
  const auto targets = spin_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  const WeightVector w = skewed_weights();
  const std::vector<TimeWeight> times = {{0.0, 50.0}, {0.01, 1.0}, {0.02, 1.0}};

  const FisherMatrix f10 = fisher_matrix(cfg, targets, w, 10.0, times);
  REQUIRE(f10.info.rows() == 8);
  CHECK((f10.info - f10.info.transpose()).norm() <= 1e-9 * f10.info.norm());
  const Eigen::VectorXd eig =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(f10.info).eigenvalues();
  CHECK(eig(0) >= -1e-9 * eig(7));

  // 10 dB more SNR = 10x the information, entrywise.
  const FisherMatrix f20 = fisher_matrix(cfg, targets, w, 20.0, times);
  CHECK((f20.info - 10.0 * f10.info).norm() <= 1e-9 * f20.info.norm());

  // Multiplicity means exactly "repeat the instant".
  const std::vector<TimeWeight> expanded = {
      {0.0, 25.0}, {0.0, 25.0}, {0.01, 1.0}, {0.02, 1.0}};
  const FisherMatrix fe = fisher_matrix(cfg, targets, w, 10.0, expanded);
  CHECK((fe.info - f10.info).norm() <= 1e-10 * f10.info.norm());
}

TEST_CASE("fisher mode basis reassembles the full matrix for any weights") {
  OamSystemConfig cfg = test_config();
  const auto targets = spin_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  const std::vector<TimeWeight> times = {{0.0, 10.0}, {0.015, 1.0}};
  const auto basis = fisher_mode_basis(cfg, targets, times);
  REQUIRE(basis.size() == 5);

  const double xi2 = std::pow(10.0, -7.0 / 10.0);
  for (const WeightVector& w : {skewed_weights(), uniform_weights(5)}) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(8, 8);
    for (int u = 0; u < 5; ++u)
      sum += w.amplitudes(u) * w.amplitudes(u) * basis[u];
    sum /= xi2;
    const FisherMatrix direct = fisher_matrix(cfg, targets, w, 7.0, times);
    CHECK((sum - direct.info).norm() <= 1e-9 * direct.info.norm());
  }
}

TEST_CASE("pcrb inverts a diagonal Fisher matrix exactly") {
  FisherMatrix f;
  f.info = Eigen::Vector3d(4.0, 0.25, 1e4).asDiagonal();
  f.params = {{0, ParamKind::kRange},
              {0, ParamKind::kElevation},
              {0, ParamKind::kAzimuth}};
  const PcrbResult r = pcrb(f);
  CHECK(!r.singular);
  CHECK(r.bound(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(r.bound(1) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(r.bound(2) == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("pcrb isolates parameters with no information") {
  OamSystemConfig cfg = test_config();
  const auto targets = spin_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  // Only t = 0: spin has zero leverage, positions stay identifiable.
  const FisherMatrix f =
      fisher_matrix(cfg, targets, skewed_weights(), 20.0, {{0.0, 100.0}});
  const PcrbResult r = pcrb(f);
  for (int i = 0; i < 8; ++i) {
    if (f.params[i].kind == ParamKind::kSpin) {
      CHECK(std::isinf(r.bound(i)));
    } else {
      CHECK(std::isfinite(r.bound(i)));
      CHECK(r.bound(i) > 0.0);
    }
  }
  CHECK(r.condition >= 1.0);
}

TEST_CASE("more observation instants never loosen the bound") {
  OamSystemConfig cfg = test_config();
  const auto targets = spin_scene();
  cfg.gain = calibrate_gain(cfg, targets);
  const WeightVector w = uniform_weights(5);
  std::vector<TimeWeight> base;
  for (int n = 0; n < 40; ++n) base.push_back({n * 2e-3, 1.0});
  auto more = base;
  for (int n = 40; n < 80; ++n) more.push_back({n * 2e-3, 1.0});

  const FisherMatrix f1 = fisher_matrix(cfg, targets, w, 15.0, base);
  const PcrbResult r1 = pcrb(f1);
  const PcrbResult r2 = pcrb(fisher_matrix(cfg, targets, w, 15.0, more));
  for (int i = 0; i < 8; ++i) {
    REQUIRE(std::isfinite(r1.bound(i)));
    CHECK(r2.bound(i) <= r1.bound(i) * (1.0 + 1e-9));
    // Inverse-diagonal inequality: marginalizing can only inflate variance.
    CHECK(r1.bound(i) >= (1.0 - 1e-9) / f1.info(i, i));
  }
}

TEST_CASE("zero-forcing detection is exact with perfect knowledge") {
  OamSystemConfig cfg = test_config();
  cfg.comm_gain = calibrate_comm_gain(cfg, 82.5, 0.35, 1.2, 0.25);
  const auto channels = user_mode_channels(cfg, 82.5, 0.35, 1.2);
  REQUIRE(channels.size() == 4);
  const WeightVector w = skewed_weights();
  auto rng = make_rng(5, 0, 0, 0);
  for (std::size_t sub = 0; sub < channels.size(); ++sub) {
    const CVec s = qpsk_symbols(rng, 5);
    // Noise-free observation; detection must return weight * symbol exactly.
    const CVec y = channels[sub].cwiseProduct(w.amplitudes.cast<cplx>())
                       .cwiseProduct(s);
    const CVec det = zf_detect(channels[sub], y);
    const CVec expect = w.amplitudes.cast<cplx>().cwiseProduct(s);
    CHECK((det - expect).norm() <= 1e-10 * expect.norm());
  }
}

TEST_CASE("zf_detect rejects a channel with a dead mode") {
  CVec bad(3);
  bad << cplx(1, 0), cplx(0, 0), cplx(0.5, 0.5);
  CVec y = CVec::Ones(3);
  CHECK_THROWS_AS(zf_detect(bad, y), std::domain_error);
}

TEST_CASE("qpsk symbols are unit-modulus quadrature points") {
  auto rng = make_rng(6, 0, 0, 0);
  const CVec s = qpsk_symbols(rng, 400);
  int quadrant[4] = {0, 0, 0, 0};
  for (int i = 0; i < 400; ++i) {
    CHECK(std::abs(std::abs(s(i)) - 1.0) <= 1e-12);
    const int q = (s(i).real() > 0 ? 0 : 1) + (s(i).imag() > 0 ? 0 : 2);
    ++quadrant[q];
  }
  for (int q = 0; q < 4; ++q) CHECK(quadrant[q] > 50);
}

TEST_CASE("analytic sinr reduces to the matched-filter form under perfect CSI") {
  OamSystemConfig cfg = test_config();
  cfg.comm_gain = calibrate_comm_gain(cfg, 90.0, 0.5, 2.0, 0.25);
  const auto ch = user_mode_channels(cfg, 90.0, 0.5, 2.0);
  const WeightVector w = skewed_weights();
  const double snr_db = 12.0;
  const RateReport rep = zf_rate(cfg, ch, ch, w, snr_db);
  const double xi2 = std::pow(10.0, -snr_db / 10.0);
  double rate = 0.0;
  for (int u = 0; u < 5; ++u)
    for (int sub = 0; sub < 4; ++sub) {
      const double expect =
          w.amplitudes(u) * w.amplitudes(u) * std::norm(ch[sub](u)) / xi2;
      CHECK(rep.sinr(u, sub) == doctest::Approx(expect).epsilon(1e-10));
      rate += std::log2(1.0 + expect);
    }
  CHECK(rep.avg_rate == doctest::Approx(rate / 5.0).epsilon(1e-12));
}

TEST_CASE("channel mismatch enters the sinr as residual interference") {
  OamSystemConfig cfg = test_config();
  cfg.comm_gain = calibrate_comm_gain(cfg, 90.0, 0.5, 2.0, 0.25);
  const auto ch = user_mode_channels(cfg, 90.0, 0.5, 2.0);
  const auto est = perturb_channels(ch, 0.05, 11, 0);
  const WeightVector w = uniform_weights(5);
  const double snr_db = 15.0;
  const RateReport rep = zf_rate(cfg, ch, est, w, snr_db);
  const double xi2 = std::pow(10.0, -snr_db / 10.0);
  for (int u = 0; u < 5; ++u)
    for (int sub = 0; sub < 4; ++sub) {
      const double a2 = w.amplitudes(u) * w.amplitudes(u);
      const double leak = std::norm(ch[sub](u) / est[sub](u) - 1.0) * a2;
      const double noise = xi2 / std::norm(est[sub](u));
      CHECK(rep.sinr(u, sub) == doctest::Approx(a2 / (leak + noise)).epsilon(1e-10));
    }
  // Perturbed estimate can only degrade the average rate.
  const RateReport perfect = zf_rate(cfg, ch, ch, w, snr_db);
  CHECK(rep.avg_rate < perfect.avg_rate);

  // Zero claimed error leaves the channels untouched.
  const auto same = perturb_channels(ch, 0.0, 11, 0);
  for (std::size_t sub = 0; sub < ch.size(); ++sub)
    CHECK((same[sub] - ch[sub]).norm() == 0.0);
}

TEST_CASE("monte carlo detection statistics approach the analytic sinr") {
  OamSystemConfig cfg = test_config();
  cfg.comm_gain = calibrate_comm_gain(cfg, 82.5, 0.35, 1.2, 0.25);
  const auto ch = user_mode_channels(cfg, 82.5, 0.35, 1.2);
  const auto est = perturb_channels(ch, 0.03, 21, 0);
  const WeightVector w = uniform_weights(5);
  const double snr_db = 10.0;
  const RateReport rep = zf_rate(cfg, ch, est, w, snr_db);

  const int draws = 20000;
  auto rng = make_rng(77, 0, 9, 0);
  Eigen::MatrixXd err2 = Eigen::MatrixXd::Zero(5, 4);
  for (int d = 0; d < draws; ++d) {
    for (int sub = 0; sub < 4; ++sub) {
      const CVec s = qpsk_symbols(rng, 5);
      const CVec y = comm_observe(ch[sub], w, s, snr_db, rng);
      const CVec det = zf_detect(est[sub], y);
      const CVec truth = w.amplitudes.cast<cplx>().cwiseProduct(s);
      err2.col(sub) += (det - truth).cwiseAbs2();
    }
  }
  err2 /= draws;
  for (int u = 0; u < 5; ++u)
    for (int sub = 0; sub < 4; ++sub) {
      const double a2 = w.amplitudes(u) * w.amplitudes(u);
      const double mc_sinr = a2 / err2(u, sub);
      CHECK(mc_sinr == doctest::Approx(rep.sinr(u, sub)).epsilon(0.10));
    }
}
