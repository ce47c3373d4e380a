#pragma once

#include "cvqkd/phase_space.hpp"
#include "cvqkd/random.hpp"

namespace cvqkd {

// Lumped channel + receiver model. eta_ch is the fiber (untrusted) passive
// transmittance, eta_d the trusted detector efficiency, nu_el the trusted
// electronic noise and excess_noise the untrusted noise referred to the
// channel output, all in shot-noise units.
struct ChannelParams {
  double eta_ch = 0.63387;
  double eta_d = 0.33;
  double nu_el = 0.043;
  double excess_noise = 0.0;

  double total_transmittance() const { return eta_ch * eta_d; }
  // per-quadrature variance of the heterodyne outcome about its mean
  double heterodyne_variance() const { return 2.0 + nu_el + eta_d * excess_noise; }

  void validate() const;  // throws std::domain_error on out-of-range fields
};

// 10^(-length*loss/10); length and loss must be non-negative.
double fiber_transmittance(double length_km, double loss_db_per_km);

// Mean field after the channel and detector: alpha * sqrt(eta_ch * eta_d).
ComplexAmplitude received_mean(ComplexAmplitude alpha, const ChannelParams& params);

// One heterodyne outcome: q, p ~ Normal(2 Re mean / 2 Im mean, sigma^2) with
// sigma^2 = params.heterodyne_variance(). Consumes exactly one normal pair.
QuadratureSample measure_heterodyne(ComplexAmplitude mean, const ChannelParams& params,
                                    RandomSource& rng);

}  // namespace cvqkd
