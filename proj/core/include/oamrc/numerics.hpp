#pragma once

// Shared numerical kernels: integer-order Bessel functions of the first kind,
// Hermitian eigendecomposition, Moore-Penrose pseudo-inverse, a radix-2 FFT
// with a short-time Fourier transform built on it, and deterministic seeded
// random number generation.  Everything downstream (steering vectors, MUSIC,
// spectrograms, Monte Carlo draws) routes through this header.

#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oamrc {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

// ---------------------------------------------------------------------------
// Bessel functions of the first kind, integer order
// ---------------------------------------------------------------------------

/// J_n(x) for integer n (any sign) and real x.
double bessel_jn(int n, double x);

/// J_0(x) .. J_nmax(x) in one pass; nmax >= 0.
///
/// For |x| < 12 each order is summed by the ascending power series.  For
/// larger arguments the series alternates with catastrophic cancellation, so
/// the whole ladder is generated by Miller's backward recurrence instead,
/// normalized with the even-order sum rule J_0 + 2*sum_k J_{2k} = 1
/// (Abramowitz & Stegun 9.1.46).
std::vector<double> bessel_jn_sequence(int nmax, double x);

/// d/dx J_n(x), via the two-sided recurrence (J_{n-1} - J_{n+1})/2.
double bessel_jn_derivative(int n, double x);

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
struct Evd {
  Eigen::VectorXd eigenvalues;  ///< real, ascending
  CMat eigenvectors;            ///< columns, orthonormal, same order
};

/// Decompose a Hermitian matrix.  Throws std::invalid_argument if `a` is not
/// square or departs from Hermitian symmetry by more than `hermitian_tol`
/// relative to its norm.  Guarantees, up to numerical tolerance:
/// reconstruction a == V diag(w) V^H and orthonormal V.
Evd hermitian_evd(const CMat& a, double hermitian_tol = 1e-9);

/// Moore-Penrose pseudo-inverse via SVD.  Singular values below
/// `rel_tol * max_singular_value` are treated as zero.
CMat pseudo_inverse(const CMat& a, double rel_tol = 1e-12);

// ---------------------------------------------------------------------------
// FFT and short-time Fourier transform
// ---------------------------------------------------------------------------

/// In-place decimation-in-time radix-2 FFT; size must be a power of two.
/// `inverse` applies the conjugate transform scaled by 1/n.
void fft_pow2(std::vector<cplx>& data, bool inverse = false);

enum class StftWindow { kGaussian, kHann };

struct StftParams {
  int window_len = 128;      ///< samples per analysis frame
  int hop = 16;              ///< samples between consecutive frames
  int padding_factor = 4;    ///< FFT length = next pow2 of window_len * factor
  StftWindow window = StftWindow::kGaussian;  ///< Gaussian sigma = len/6
  double sample_rate = 1.0;  ///< Hz, for axis scaling
};

/// Magnitude spectrogram of a complex signal with physical axes.  Frequencies
/// are centered (negative to positive); frame times refer to window starts.
struct Spectrogram {
  std::vector<double> time_s;     ///< frame start times, seconds
  std::vector<double> freq_hz;    ///< FFT bin centers, ascending
  Eigen::MatrixXd magnitude;      ///< freq x time
  double bin_hz = 0.0;            ///< frequency grid step
};

/// STFT magnitude of `signal`.  Throws std::invalid_argument when the signal
/// is shorter than one window or parameters are non-positive.
Spectrogram stft(const std::vector<cplx>& signal, const StftParams& params);

/// The analysis window used by stft(): length n, symmetric, values in [0, 1].
std::vector<double> stft_window(int n, StftWindow kind);

// ---------------------------------------------------------------------------
// Seeded random numbers
// ---------------------------------------------------------------------------

/// splitmix64 step; used to whiten and combine seed material.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derive an independent substream seed from a root seed and a coordinate
/// triple (trial, module, index).  Distinct coordinates give statistically
/// independent streams, and the mapping is platform-stable.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t trial,
                          std::uint64_t module, std::uint64_t index);

/// PRNG for one substream.
std::mt19937_64 make_rng(std::uint64_t root, std::uint64_t trial,
                         std::uint64_t module, std::uint64_t index);

/// Standard normal via Box-Muller on raw 64-bit draws.  Bit-reproducible
/// across platforms, unlike std::normal_distribution.
double gaussian(std::mt19937_64& rng);

/// Circularly symmetric complex normal with E|z|^2 = 1.
cplx gaussian_cplx(std::mt19937_64& rng);

/// Uniform in [0, 1).
double uniform01(std::mt19937_64& rng);

}  // namespace oamrc
