#include "cvqkd/key_map.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cvqkd {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration on P_n.
struct GaussRule {
  std::vector<double> x, w;
  explicit GaussRule(int n) : x(n), w(n) {
    for (int i = 0; i < (n + 1) / 2; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double pp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = 0.0;
        for (int j = 0; j < n; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
        }
        pp = n * (z * p0 - p1) / (z * z - 1.0);
        const double dz = p0 / pp;
        z -= dz;
        if (std::abs(dz) < 1e-15) break;
      }
      x[i] = -z;
      x[n - 1 - i] = z;
      w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
      w[n - 1 - i] = w[i];
    }
  }
};

const GaussRule& rule16() {
  static const GaussRule r(16);
  return r;
}

// Integral of the (q, p) Gaussian over {r in [r0, r1], theta in [t0, t1]}
// in the polar coordinates q = sqrt(2) r cos(theta), p = sqrt(2) r sin(theta).
double annulus_sector_integral(double mq, double mp, double var, double r0, double r1,
                               double t0, double t1, int panels_r, int panels_t) {
  const GaussRule& g = rule16();
  const double norm = 1.0 / (kTwoPi * var);
  const double inv2v = 1.0 / (2.0 * var);
  double total = 0.0;
  const double hr = (r1 - r0) / panels_r;
  const double ht = (t1 - t0) / panels_t;
  for (int pr = 0; pr < panels_r; ++pr) {
    const double ra = r0 + pr * hr;
    for (int ir = 0; ir < 16; ++ir) {
      const double r = ra + 0.5 * hr * (g.x[ir] + 1.0);
      const double wr = 0.5 * hr * g.w[ir];
      const double s2r = std::numbers::sqrt2 * r;
      double theta_sum = 0.0;
      for (int pt = 0; pt < panels_t; ++pt) {
        const double ta = t0 + pt * ht;
        for (int it = 0; it < 16; ++it) {
          const double th = ta + 0.5 * ht * (g.x[it] + 1.0);
          const double wt = 0.5 * ht * g.w[it];
          const double dq = s2r * std::cos(th) - mq;
          const double dp = s2r * std::sin(th) - mp;
          theta_sum += wt * std::exp(-(dq * dq + dp * dp) * inv2v);
        }
      }
      total += wr * 2.0 * r * norm * theta_sum;
    }
  }
  return total;
}

double converged_sector(double mq, double mp, double var, double r0, double r1,
                        double t0, double t1) {
  // concentrate radial panels around the Gaussian ridge
  const double sigma_r = std::sqrt(var / 2.0);
  // Beyond ridge + 40 sigma the integrand underflows double precision, so an
  // unbounded (or huge) outer radius can be truncated without error.
  const double ridge_r = std::sqrt((mq * mq + mp * mp) / 2.0);
  r1 = std::min(r1, ridge_r + 40.0 * sigma_r);
  if (!(r1 > r0)) return 0.0;
  int panels_r = std::max(24, static_cast<int>(std::ceil((r1 - r0) / (sigma_r / 3.0))));
  panels_r = std::min(panels_r, 600);
  const int panels_t = std::max(24, static_cast<int>(std::ceil((t1 - t0) / (kTwoPi / 96.0))));
  const double coarse =
      annulus_sector_integral(mq, mp, var, r0, r1, t0, t1, panels_r, panels_t);
  const double fine =
      annulus_sector_integral(mq, mp, var, r0, r1, t0, t1, 2 * panels_r, 2 * panels_t);
  const double tol = std::max(1e-13, 1e-10 * std::abs(fine));
  if (std::abs(fine - coarse) > tol) {
    std::ostringstream os;
    os << "postselection quadrature did not converge: coarse=" << coarse
       << " fine=" << fine << " panels_r=" << panels_r << " panels_t=" << panels_t;
    throw std::runtime_error(os.str());
  }
  return fine;
}

}  // namespace

void KeyMapParams::validate() const {
  // delta_r == detection_limit is the degenerate empty annulus; it is legal
  // so that oracles can evaluate the zero-measure corner.
  if (!(delta_r >= 0.0) || !(detection_limit >= delta_r) ||
      !std::isfinite(detection_limit)) {
    throw std::domain_error("key map annulus requires 0 <= delta_r <= detection_limit");
  }
}

SiftedSymbol key_map(const QuadratureSample& sample, const KeyMapParams& params) {
  params.validate();
  const double r = sample.radius();
  if (r < params.delta_r || r > params.detection_limit) return {};
  double theta = std::atan2(sample.p, sample.q);
  if (theta < 0.0) theta += kTwoPi;
  int symbol = static_cast<int>(theta / (std::numbers::pi / 2.0));
  if (symbol > 3) symbol = 3;  // theta == 2pi after rounding
  return {static_cast<std::int8_t>(symbol)};
}

SiftResult sift(std::span<const QuadratureSample> bob,
                std::span<const std::uint8_t> alice_symbols,
                const KeyMapParams& params) {
  if (bob.size() != alice_symbols.size()) {
    throw std::invalid_argument("sift requires equally many samples and symbols");
  }
  params.validate();
  SiftResult out;
  out.alice_bits.reserve(2 * bob.size());
  out.bob_bits.reserve(2 * bob.size());
  std::uint64_t symbol_errors = 0;
  for (std::size_t i = 0; i < bob.size(); ++i) {
    const SiftedSymbol m = key_map(bob[i], params);
    if (!m.kept()) continue;
    const std::uint8_t a = alice_symbols[i];
    if (a > 3) throw std::domain_error("alice symbol outside 0..3");
    ++out.kept;
    if (m.value != static_cast<std::int8_t>(a)) ++symbol_errors;
    const std::uint8_t ga = gray_encode(a);
    const std::uint8_t gb = gray_encode(static_cast<std::uint8_t>(m.value));
    out.alice_bits.push_back((ga >> 1) & 1);
    out.alice_bits.push_back(ga & 1);
    out.bob_bits.push_back((gb >> 1) & 1);
    out.bob_bits.push_back(gb & 1);
  }
  if (out.kept > 0) {
    out.symbol_qber = static_cast<double>(symbol_errors) / static_cast<double>(out.kept);
    std::uint64_t bit_errors = 0;
    for (std::size_t i = 0; i < out.alice_bits.size(); ++i) {
      bit_errors += out.alice_bits[i] ^ out.bob_bits[i];
    }
    out.bit_qber = static_cast<double>(bit_errors) / static_cast<double>(out.alice_bits.size());
  }
  out.postselect_fraction =
      bob.empty() ? 0.0 : static_cast<double>(out.kept) / static_cast<double>(bob.size());
  return out;
}

double postselect_fraction_oracle(ComplexAmplitude mean, double noise_variance,
                                  const KeyMapParams& params) {
  params.validate();
  if (!(noise_variance > 0.0)) {
    throw std::domain_error("noise variance must be positive");
  }
  return converged_sector(mean.real(), mean.imag(), noise_variance, params.delta_r,
                          params.detection_limit, 0.0, kTwoPi);
}

double quadrant_probability_oracle(ComplexAmplitude mean, double noise_variance,
                                   const KeyMapParams& params, int quadrant) {
  params.validate();
  if (!(noise_variance > 0.0)) {
    throw std::domain_error("noise variance must be positive");
  }
  if (quadrant < 0 || quadrant > 3) {
    throw std::domain_error("quadrant must be in 0..3");
  }
  const double t0 = quadrant * (std::numbers::pi / 2.0);
  return converged_sector(mean.real(), mean.imag(), noise_variance, params.delta_r,
                          params.detection_limit, t0, t0 + std::numbers::pi / 2.0);
}

void write_sifted_bits(const std::string& path, std::span<const std::uint8_t> bits,
                       std::uint32_t convention) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const char magic[4] = {'S', 'K', 'B', '1'};
  f.write(magic, 4);
  f.write(reinterpret_cast<const char*>(&convention), sizeof(convention));
  const std::uint64_t count = bits.size();
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] & 1) packed[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
  }
  f.write(reinterpret_cast<const char*>(packed.data()),
          static_cast<std::streamsize>(packed.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

std::vector<std::uint8_t> read_sifted_bits(const std::string& path,
                                           std::uint32_t* convention) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SKB1", 4) != 0) {
    throw std::runtime_error(path + " is not a sifted key file");
  }
  std::uint32_t conv = 0;
  std::uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&conv), sizeof(conv));
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::vector<std::uint8_t> packed((count + 7) / 8);
  f.read(reinterpret_cast<char*>(packed.data()),
         static_cast<std::streamsize>(packed.size()));
  if (!f) throw std::runtime_error("truncated sifted key file " + path);
  if (convention) *convention = conv;
  std::vector<std::uint8_t> bits(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    bits[i] = (packed[i >> 3] >> (i & 7)) & 1;
  }
  return bits;
}

}  // namespace cvqkd
