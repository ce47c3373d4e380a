#include "cvqkd/random.hpp"

#include <cmath>
#include <numbers>

namespace cvqkd {

std::pair<double, double> RandomSource::normal_pair() {
  // 1 - u keeps the log argument in (0, 1]
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double th = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(th), r * std::sin(th)};
}

}  // namespace cvqkd
