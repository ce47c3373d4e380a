#include "cvqkd/channel.hpp"

#include <cmath>
#include <stdexcept>

namespace cvqkd {

void ChannelParams::validate() const {
  if (!(eta_ch > 0.0 && eta_ch <= 1.0)) {
    throw std::domain_error("eta_ch must be in (0, 1]");
  }
  if (!(eta_d > 0.0 && eta_d <= 1.0)) {
    throw std::domain_error("eta_d must be in (0, 1]");
  }
  if (!(nu_el >= 0.0) || !std::isfinite(nu_el)) {
    throw std::domain_error("nu_el must be finite and non-negative");
  }
  if (!(excess_noise >= 0.0) || !std::isfinite(excess_noise)) {
    throw std::domain_error("excess_noise must be finite and non-negative");
  }
}

double fiber_transmittance(double length_km, double loss_db_per_km) {
  if (!(length_km >= 0.0) || !(loss_db_per_km >= 0.0)) {
    throw std::domain_error("fiber length and loss must be non-negative");
  }
  return std::pow(10.0, -length_km * loss_db_per_km / 10.0);
}

ComplexAmplitude received_mean(ComplexAmplitude alpha, const ChannelParams& params) {
  params.validate();
  return alpha * std::sqrt(params.total_transmittance());
}

QuadratureSample measure_heterodyne(ComplexAmplitude mean, const ChannelParams& params,
                                    RandomSource& rng) {
  const double sigma = std::sqrt(params.heterodyne_variance());
  const auto [g1, g2] = rng.normal_pair();
  return {2.0 * mean.real() + sigma * g1, 2.0 * mean.imag() + sigma * g2};
}

}  // namespace cvqkd
