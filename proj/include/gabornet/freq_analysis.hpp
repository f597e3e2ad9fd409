// Closed-form frequency responses of the Gaussian-enveloped cosine and sine
// harmonics that make up one axis of a phase-induced Gabor kernel, and a
// discrete-sum transform for cross-checking them.
//
// Transform convention: g_hat(w) = integral g(x) exp(-j w x) dx, envelope
// normalised to unit area.

#ifndef GABORNET_FREQ_ANALYSIS_HPP_
#define GABORNET_FREQ_ANALYSIS_HPP_

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "gabornet/common.hpp"

namespace gabornet::freq {

enum class Harmonic { kCos, kSin };

namespace detail {

template <typename Scalar>
void check_sigma(Scalar sigma) {
  if (!(sigma > Scalar(0)))
    throw ContractViolation("frequency response: sigma must be positive");
}

// Gaussian lobes centred at +omega0 and -omega0.
template <typename Scalar>
std::pair<Scalar, Scalar> lobes(Scalar omega, Scalar omega0, Scalar sigma) {
  const Scalar s2 = sigma * sigma;
  const Scalar a = std::exp(-s2 * (omega - omega0) * (omega - omega0) / 2);
  const Scalar b = std::exp(-s2 * (omega + omega0) * (omega + omega0) / 2);
  return {a, b};
}

}  // namespace detail

template <typename Scalar>
std::complex<Scalar> response_cos(Scalar omega, Scalar omega0, Scalar sigma,
                                  Scalar phase) {
  detail::check_sigma(sigma);
  const auto [a, b] = detail::lobes(omega, omega0, sigma);
  return {Scalar(0.5) * (a + b) * std::cos(phase),
          Scalar(0.5) * (a - b) * std::sin(phase)};
}

template <typename Scalar>
std::complex<Scalar> response_sin(Scalar omega, Scalar omega0, Scalar sigma,
                                  Scalar phase) {
  detail::check_sigma(sigma);
  const auto [a, b] = detail::lobes(omega, omega0, sigma);
  return {Scalar(0.5) * (a + b) * std::sin(phase),
          -Scalar(0.5) * (a - b) * std::cos(phase)};
}

template <typename Scalar>
std::complex<Scalar> response(Harmonic kind, Scalar omega, Scalar omega0,
                              Scalar sigma, Scalar phase) {
  return kind == Harmonic::kCos ? response_cos(omega, omega0, sigma, phase)
                                : response_sin(omega, omega0, sigma, phase);
}

// |g_hat(w)|^2 in closed form. The cross term flips sign between the cosine
// and sine harmonics.
template <typename Scalar>
Scalar squared_magnitude(Harmonic kind, Scalar omega, Scalar omega0,
                         Scalar sigma, Scalar phase) {
  detail::check_sigma(sigma);
  const Scalar s2 = sigma * sigma;
  const Scalar lobes = Scalar(0.25) * std::exp(-s2 * (omega - omega0) * (omega - omega0)) +
                       Scalar(0.25) * std::exp(-s2 * (omega + omega0) * (omega + omega0));
  const Scalar cross = Scalar(0.5) * std::cos(2 * phase) *
                       std::exp(-s2 * (omega * omega + omega0 * omega0));
  return kind == Harmonic::kCos ? lobes + cross : lobes - cross;
}

// Squared magnitude at zero frequency.
template <typename Scalar>
Scalar dc_response(Harmonic kind, Scalar omega0, Scalar sigma, Scalar phase) {
  detail::check_sigma(sigma);
  const Scalar decay = std::exp(-sigma * sigma * omega0 * omega0);
  const Scalar c2p = std::cos(2 * phase);
  return Scalar(0.5) * (kind == Harmonic::kCos ? 1 + c2p : 1 - c2p) * decay;
}

// Discrete transform sum_x g(x) exp(-j w x) of a signal sampled at
// x = -h..h, evaluated at each requested frequency.
template <typename Scalar>
std::vector<std::complex<Scalar>> numeric_transform_check(
    const VectorX<Scalar>& g1d, const std::vector<Scalar>& omega_axis) {
  if (g1d.size() % 2 == 0)
    throw ContractViolation("numeric_transform_check: signal must have odd length");
  const Eigen::Index half = (g1d.size() - 1) / 2;
  std::vector<std::complex<Scalar>> out;
  out.reserve(omega_axis.size());
  for (Scalar w : omega_axis) {
    std::complex<Scalar> acc{0, 0};
    for (Eigen::Index i = 0; i < g1d.size(); ++i) {
      const Scalar x = Scalar(i - half);
      acc += g1d[i] * std::polar(Scalar(1), -w * x);
    }
    out.push_back(acc);
  }
  return out;
}

// Uniform samples of [-pi, pi]; an odd count includes w = 0 exactly.
template <typename Scalar = double>
std::vector<Scalar> frequency_axis(int samples = 257) {
  if (samples < 2) throw ConfigError("frequency axis needs at least 2 samples");
  std::vector<Scalar> axis(samples);
  const Scalar pi = std::numbers::pi_v<Scalar>;
  const int mid = (samples - 1) / 2;
  for (int i = 0; i < samples; ++i) {
    axis[i] = (samples % 2 == 1 && i == mid)
                  ? Scalar(0)
                  : -pi + Scalar(2) * pi * Scalar(i) / Scalar(samples - 1);
  }
  return axis;
}

}  // namespace gabornet::freq

#endif  // GABORNET_FREQ_ANALYSIS_HPP_
