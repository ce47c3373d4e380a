#pragma once

#include <complex>
#include <cstdint>
#include <numbers>
#include <span>

namespace cvqkd {

using ComplexAmplitude = std::complex<double>;

// Default constellation orientation: points on the quadrant diagonals.
inline constexpr double kDefaultRotation = std::numbers::pi / 4.0;

// Heterodyne outcome in shot-noise units where a homodyne vacuum quadrature
// has variance 1. For a coherent state |a> an ideal receiver yields q, p
// Gaussian with mean (2 Re a, 2 Im a) and per-quadrature variance 2 (vacuum
// plus the heterodyne unit); gamma() = (q + ip)/2 then follows the Husimi
// distribution with E|gamma - a|^2 = 1.
struct QuadratureSample {
  double q = 0.0;
  double p = 0.0;

  double radius() const;  // sqrt((q^2 + p^2) / 2)
  ComplexAmplitude gamma() const { return {0.5 * q, 0.5 * p}; }
};

// Four coherent states amplitude * exp(i(symbol*pi/2 + rotation)), symbol 0..3.
struct Constellation {
  double amplitude = 0.85;
  double rotation = kDefaultRotation;

  ComplexAmplitude point(int symbol) const;
};

// Prepared state for one symbol; throws std::domain_error unless 0 <= symbol < 4.
ComplexAmplitude qpsk_state(int symbol, double amplitude,
                            double rotation = kDefaultRotation);

// Phase-space moment estimates around displacement beta. The -1 and -3x+1
// corrections remove the anti-normal-ordering bias of heterodyne (Husimi)
// sampling: on ideal samples of |a> with beta = 0 they converge to |a|^2 and
// |a|^4 + |a|^2.
struct DisplacedMoments {
  double mean_n = 0.0;
  double mean_n2 = 0.0;
  std::uint64_t count = 0;
};

DisplacedMoments estimate_displaced_moments(std::span<const QuadratureSample> samples,
                                            ComplexAmplitude beta);

// H2; H(0) = H(1) = 0, domain [0, 1] enforced with std::domain_error.
double binary_entropy(double p);

}  // namespace cvqkd
