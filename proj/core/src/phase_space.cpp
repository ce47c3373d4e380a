#include "cvqkd/phase_space.hpp"

#include <cmath>
#include <stdexcept>

namespace cvqkd {

double QuadratureSample::radius() const {
  return std::sqrt(0.5 * (q * q + p * p));
}

ComplexAmplitude Constellation::point(int symbol) const {
  if (symbol < 0 || symbol > 3) {
    throw std::domain_error("constellation symbol must be in 0..3");
  }
  const double phase = symbol * (std::numbers::pi / 2.0) + rotation;
  return std::polar(amplitude, phase);
}

ComplexAmplitude qpsk_state(int symbol, double amplitude, double rotation) {
  if (amplitude < 0.0 || !std::isfinite(amplitude)) {
    throw std::domain_error("state amplitude must be finite and non-negative");
  }
  Constellation c{amplitude, rotation};
  return c.point(symbol);
}

DisplacedMoments estimate_displaced_moments(std::span<const QuadratureSample> samples,
                                            ComplexAmplitude beta) {
  if (samples.empty()) {
    throw std::domain_error("moment estimate requires at least one sample");
  }
  double s2 = 0.0;
  double s4 = 0.0;
  for (const auto& s : samples) {
    const ComplexAmplitude d = s.gamma() - beta;
    const double a2 = std::norm(d);
    s2 += a2;
    s4 += a2 * a2;
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  DisplacedMoments m;
  m.count = samples.size();
  m.mean_n = s2 * inv - 1.0;
  m.mean_n2 = s4 * inv - 3.0 * s2 * inv + 1.0;
  return m;
}

double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("binary_entropy argument outside [0, 1]");
  }
  if (p == 0.0 || p == 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

}  // namespace cvqkd
