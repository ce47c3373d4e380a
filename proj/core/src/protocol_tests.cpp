#include "cvqkd/protocol_tests.hpp"

#include <cmath>
#include <stdexcept>

namespace cvqkd {

TestRoundSplit split_rounds(std::uint64_t total, double ratio) {
  if (total == 0) throw std::domain_error("round count must be positive");
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw std::domain_error("test ratio must be in [0, 1]");
  }
  const double k = std::round(ratio * static_cast<double>(total));
  TestRoundSplit s;
  s.k_t = static_cast<std::uint64_t>(k);
  if (s.k_t > total) s.k_t = total;
  s.n = total - s.k_t;
  return s;
}

std::vector<std::uint64_t> select_test_rounds(std::uint64_t total, double ratio,
                                              RandomSource& rng) {
  const TestRoundSplit s = split_rounds(total, ratio);
  // selection sampling: position i is taken with probability
  // (remaining picks) / (remaining positions), which is uniform over subsets
  std::vector<std::uint64_t> picks;
  picks.reserve(s.k_t);
  std::uint64_t need = s.k_t;
  for (std::uint64_t i = 0; i < total && need > 0; ++i) {
    const double p = static_cast<double>(need) / static_cast<double>(total - i);
    if (rng.uniform() < p) {
      picks.push_back(i);
      --need;
    }
  }
  return picks;
}

EnergyTestResult energy_test(std::span<const QuadratureSample> samples,
                             const EnergyTestParams& params) {
  if (!(params.beta_et > 0.0)) throw std::domain_error("beta_et must be positive");
  if (!(params.max_outlier_fraction >= 0.0 && params.max_outlier_fraction <= 1.0)) {
    throw std::domain_error("outlier fraction must be in [0, 1]");
  }
  if (params.k_t != samples.size()) {
    throw std::invalid_argument("energy test sample count does not match k_t");
  }
  EnergyTestResult r;
  for (const auto& s : samples) {
    if (std::abs(s.gamma()) >= params.beta_et) ++r.outliers;
  }
  r.allowed = static_cast<std::uint64_t>(
      std::floor(params.max_outlier_fraction * static_cast<double>(params.k_t)));
  r.pass = r.outliers <= r.allowed;
  return r;
}

double mu_bound(double x, std::uint64_t m, double eps_at) {
  if (!(x >= 0.0)) throw std::domain_error("mu bound requires x >= 0");
  if (m == 0) throw std::domain_error("mu bound requires m >= 1");
  if (!(eps_at > 0.0 && eps_at < 1.0)) {
    throw std::domain_error("eps_at must lie in (0, 1)");
  }
  return std::sqrt(x * x / (2.0 * static_cast<double>(m)) * std::log(2.0 / eps_at));
}

AcceptanceVerdict acceptance_test(const std::array<DisplacedMoments, 4>& observed,
                                  const AcceptanceSet& set) {
  if (!(set.t_factor >= 0.0)) throw std::domain_error("t_factor must be non-negative");
  AcceptanceVerdict v;
  v.pass = true;
  int idx = 0;
  for (int s = 0; s < 4; ++s) {
    if (observed[s].count == 0) {
      throw std::invalid_argument("acceptance test requires samples for every state");
    }
    const double obs[2] = {observed[s].mean_n, observed[s].mean_n2};
    const AcceptanceObservable* par[2] = {&set.states[s].n, &set.states[s].n2};
    for (int o = 0; o < 2; ++o) {
      AcceptanceCheck& c = v.checks[idx++];
      c.state = s;
      c.observable = o;
      c.observed = obs[o];
      c.expected = par[o]->expected;
      c.mu = mu_bound(par[o]->bound_x, par[o]->rounds, set.eps_at);
      const double t = set.t_factor * c.mu;
      c.slack = c.expected + t - c.observed;
      c.pass = set.two_sided ? std::abs(c.observed - c.expected) <= t : c.slack >= 0.0;
      v.pass = v.pass && c.pass;
    }
  }
  return v;
}

}  // namespace cvqkd
