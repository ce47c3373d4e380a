#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvqkd/phase_space.hpp"

namespace cvqkd {

// Annulus applied to the radial coordinate r = sqrt((q^2 + p^2)/2): samples
// with r < delta_r (ambiguous phase) or r > detection_limit are discarded.
struct KeyMapParams {
  double delta_r = 0.1;
  double detection_limit = 7.0;

  void validate() const;  // 0 <= delta_r <= detection_limit (equality: empty annulus)
};

// 0..3, or -1 for the discard mark.
struct SiftedSymbol {
  std::int8_t value = -1;
  bool kept() const { return value >= 0; }
};

// theta = atan2(p, q) wrapped to [0, 2pi); symbol = floor(2 theta / pi) when
// the radius lies in the closed annulus, discard otherwise.
SiftedSymbol key_map(const QuadratureSample& sample, const KeyMapParams& params);

// Counter-clockwise Gray labels 00, 01, 11, 10 for symbols 0..3.
inline std::uint8_t gray_encode(std::uint8_t symbol) {
  return static_cast<std::uint8_t>(symbol ^ (symbol >> 1));
}

// Identifier for the bit convention used in exported sifted keys: Gray-coded
// quadrants, high bit first.
inline constexpr std::uint32_t kSiftedKeyConvention = 1;

struct SiftResult {
  std::vector<std::uint8_t> alice_bits;  // two Gray bits per kept position
  std::vector<std::uint8_t> bob_bits;
  std::uint64_t kept = 0;
  double symbol_qber = 0.0;       // fraction of kept positions with symbol mismatch
  double bit_qber = 0.0;          // Hamming distance of the bit strings / length
  double postselect_fraction = 0.0;
};

// Bob applies the key map to his samples; positions he keeps contribute two
// Gray bits per party. Bob's string is the reconciliation reference.
SiftResult sift(std::span<const QuadratureSample> bob,
                std::span<const std::uint8_t> alice_symbols,
                const KeyMapParams& params);

// Probability that a heterodyne outcome with the given (q, p) mean vector
// (encoded as mean.real() = E[q], mean.imag() = E[p]) and common per-quadrature
// noise_variance lands in the keep annulus. Deterministic quadrature; throws
// std::runtime_error with diagnostics if the refinement does not converge.
double postselect_fraction_oracle(ComplexAmplitude mean, double noise_variance,
                                  const KeyMapParams& params);

// Same integrand restricted to Bob's quadrant j relative to the mean's
// quadrant; used to cross-validate sift statistics against simulation.
double quadrant_probability_oracle(ComplexAmplitude mean, double noise_variance,
                                   const KeyMapParams& params, int quadrant);

// Packed sifted-key container: header (magic, convention tag, bit count)
// followed by LSB-first packed bytes.
void write_sifted_bits(const std::string& path, std::span<const std::uint8_t> bits,
                       std::uint32_t convention = kSiftedKeyConvention);
std::vector<std::uint8_t> read_sifted_bits(const std::string& path,
                                           std::uint32_t* convention = nullptr);

}  // namespace cvqkd
