#include "oamrc/numerics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace oamrc {

namespace {

// Ascending power series for J_n(x), n >= 0.  Terms alternate, so this is
// only used below the cancellation threshold handled in bessel_jn_sequence.
double jn_series(int n, double x) {
  // Extended precision absorbs the alternating-term cancellation, which costs
  // about |x| decimal digits near the series/recurrence crossover.
  const long double half = 0.5L * x;
  long double term = 1.0L;
  for (int i = 1; i <= n; ++i) term *= half / i;  // (x/2)^n / n!
  long double sum = term;
  for (int m = 1; m <= 300; ++m) {
    term *= -half * half / (static_cast<long double>(m) * (n + m));
    sum += term;
    if (std::abs(term) <= 1e-21L * std::abs(sum)) break;
  }
  return static_cast<double>(sum);
}

constexpr double kSeriesLimit = 12.0;

// Miller's backward recurrence: run J_{k-1} = (2k/x) J_k - J_{k+1} down from
// a start order well above both x and nmax, then normalize the whole ladder
// with the even-order sum rule J_0 + 2 J_2 + 2 J_4 + ... = 1.
std::vector<double> jn_miller(int nmax, double x) {
  const int start_guess =
      static_cast<int>(std::max(static_cast<double>(nmax), x) + 20.0 +
                       10.0 * std::cbrt(x));
  const int start = start_guess + (start_guess & 1);  // even
  std::vector<long double> ladder(nmax + 1, 0.0L);
  long double jp = 0.0L;     // J_{k+1}
  long double jc = 1e-30L;   // J_k (arbitrary scale)
  long double norm = 0.0L;   // accumulates J_0 + 2*sum of even orders
  if (start <= nmax + 1) throw std::logic_error("miller start underflow");
  for (int k = start; k >= 0; --k) {
    if (k <= nmax) ladder[k] = jc;
    if ((k & 1) == 0) norm += (k == 0) ? jc : 2.0L * jc;
    const long double jm = (2.0L * k / x) * jc - jp;
    jp = jc;
    jc = jm;
    if (std::abs(jc) > 1e280L) {  // rescale to avoid overflow
      jc *= 1e-280L;
      jp *= 1e-280L;
      norm *= 1e-280L;
      for (auto& v : ladder) v *= 1e-280L;
    }
  }
  std::vector<double> out(nmax + 1);
  for (int k = 0; k <= nmax; ++k)
    out[k] = static_cast<double>(ladder[k] / norm);
  return out;
}

}  // namespace

std::vector<double> bessel_jn_sequence(int nmax, double x) {
  if (nmax < 0) throw std::invalid_argument("bessel_jn_sequence: nmax < 0");
  const double ax = std::abs(x);
  std::vector<double> out;
  if (ax < kSeriesLimit) {
    out.resize(nmax + 1);
    for (int n = 0; n <= nmax; ++n) out[n] = jn_series(n, ax);
  } else {
    out = jn_miller(nmax, ax);
  }
  if (x < 0)  // J_n(-x) = (-1)^n J_n(x)
    for (int n = 1; n <= nmax; n += 2) out[n] = -out[n];
  return out;
}

double bessel_jn(int n, double x) {
  double sign = 1.0;
  if (n < 0) {  // J_{-n}(x) = (-1)^n J_n(x)
    n = -n;
    if (n & 1) sign = -sign;
  }
  return sign * bessel_jn_sequence(n, x)[n];
}

double bessel_jn_derivative(int n, double x) {
  if (n == 0) return -bessel_jn(1, x);
  return 0.5 * (bessel_jn(n - 1, x) - bessel_jn(n + 1, x));
}

Evd hermitian_evd(const CMat& a, double hermitian_tol) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("hermitian_evd: matrix is not square");
  const double scale = std::max(1.0, a.norm());
  if ((a - a.adjoint()).norm() > hermitian_tol * scale)
    throw std::invalid_argument("hermitian_evd: matrix is not Hermitian");
  Eigen::SelfAdjointEigenSolver<CMat> solver(0.5 * (a + a.adjoint()));
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("hermitian_evd: eigensolver failed to converge");
  return Evd{solver.eigenvalues(), solver.eigenvectors()};
}

CMat pseudo_inverse(const CMat& a, double rel_tol) {
  Eigen::JacobiSVD<CMat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = rel_tol * (sv.size() > 0 ? sv(0) : 0.0);
  Eigen::VectorXd inv(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    inv(i) = sv(i) > cutoff ? 1.0 / sv(i) : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().adjoint();
}

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Minimal iterative radix-2 plan.  Twiddles are tabulated once per size so
// repeated transforms (spectrogram frames) pay no trig cost.
struct FftPlan {
  std::size_t n;
  std::vector<std::size_t> rev;
  std::vector<cplx> tw;  // tw[j] = exp(-i 2 pi j / n), j < n/2

  explicit FftPlan(std::size_t size) : n(size), rev(size) {
    std::size_t log2n = 0;
    while ((std::size_t{1} << log2n) < n) ++log2n;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < log2n; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (log2n - 1 - b);
      rev[i] = r;
    }
    tw.resize(n / 2);
    for (std::size_t j = 0; j < n / 2; ++j)
      tw[j] = std::polar(1.0, -2.0 * std::numbers::pi * double(j) / double(n));
  }

  void run(std::vector<cplx>& data, bool inverse) const {
    for (std::size_t i = 0; i < n; ++i)
      if (i < rev[i]) std::swap(data[i], data[rev[i]]);
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t stride = n / len;
      for (std::size_t base = 0; base < n; base += len) {
        for (std::size_t j = 0; j < len / 2; ++j) {
          cplx w = tw[j * stride];
          if (inverse) w = std::conj(w);
          const cplx u = data[base + j];
          const cplx v = data[base + j + len / 2] * w;
          data[base + j] = u + v;
          data[base + j + len / 2] = u - v;
        }
      }
    }
    if (inverse)
      for (auto& z : data) z /= double(n);
  }
};

}  // namespace

void fft_pow2(std::vector<cplx>& data, bool inverse) {
  if (!is_pow2(data.size()))
    throw std::invalid_argument("fft_pow2: size must be a power of two");
  FftPlan(data.size()).run(data, inverse);
}

std::vector<double> stft_window(int n, StftWindow kind) {
  if (n <= 0) throw std::invalid_argument("stft_window: n must be positive");
  std::vector<double> w(n);
  if (kind == StftWindow::kGaussian) {
    const double center = 0.5 * (n - 1);
    const double sigma = n / 6.0;
    for (int i = 0; i < n; ++i) {
      const double z = (i - center) / sigma;
      w[i] = std::exp(-0.5 * z * z);
    }
  } else {
    for (int i = 0; i < n; ++i)
      w[i] = (n == 1) ? 1.0
                      : 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
  }
  return w;
}

Spectrogram stft(const std::vector<cplx>& signal, const StftParams& params) {
  if (params.window_len <= 0 || params.hop <= 0 || params.padding_factor <= 0 ||
      params.sample_rate <= 0)
    throw std::invalid_argument("stft: parameters must be positive");
  const int n = static_cast<int>(signal.size());
  if (n < params.window_len)
    throw std::invalid_argument("stft: signal shorter than one window");

  std::size_t nfft = 1;
  while (nfft < std::size_t(params.window_len) * params.padding_factor) nfft <<= 1;

  const auto win = stft_window(params.window_len, params.window);
  const int frames = 1 + (n - params.window_len) / params.hop;

  Spectrogram out;
  out.bin_hz = params.sample_rate / double(nfft);
  out.freq_hz.resize(nfft);
  for (std::size_t i = 0; i < nfft; ++i)
    out.freq_hz[i] = (double(i) - double(nfft) / 2.0) * out.bin_hz;
  out.time_s.resize(frames);
  out.magnitude.resize(nfft, frames);

  const FftPlan plan(nfft);
  std::vector<cplx> buf(nfft);
  const std::size_t half = nfft / 2;
  for (int f = 0; f < frames; ++f) {
    const int off = f * params.hop;
    out.time_s[f] = off / params.sample_rate;
    std::fill(buf.begin(), buf.end(), cplx(0, 0));
    for (int i = 0; i < params.window_len; ++i) buf[i] = signal[off + i] * win[i];
    plan.run(buf, false);
    // fftshift so the row index runs from -fs/2 upward.
    for (std::size_t i = 0; i < nfft; ++i)
      out.magnitude(i, f) = std::abs(buf[(i + half) % nfft]);
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t trial,
                          std::uint64_t module, std::uint64_t index) {
  std::uint64_t s = root;
  std::uint64_t h = splitmix64(s);
  s = h ^ (trial * 0xA24BAED4963EE407ull);
  h = splitmix64(s);
  s = h ^ (module * 0x9FB21C651E98DF25ull);
  h = splitmix64(s);
  s = h ^ (index * 0xD6E8FEB86659FD93ull);
  return splitmix64(s);
}

std::mt19937_64 make_rng(std::uint64_t root, std::uint64_t trial,
                         std::uint64_t module, std::uint64_t index) {
  return std::mt19937_64(derive_seed(root, trial, module, index));
}

double uniform01(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

cplx gaussian_cplx(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  const double r = std::sqrt(-std::log(u1));  // so E|z|^2 = 1
  return std::polar(r, 2.0 * std::numbers::pi * u2);
}

}  // namespace oamrc
