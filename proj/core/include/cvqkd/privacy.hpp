#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvqkd/random.hpp"

namespace cvqkd {

// l x m Toeplitz matrix over GF(2): T[i][j] = first_row[j-i] for j >= i,
// first_col[i-j] otherwise. Seed randomness is rows + cols - 1 bits.
struct ToeplitzSeed {
  std::uint64_t rows = 0;  // output bits l
  std::uint64_t cols = 0;  // input bits m
  std::vector<std::uint8_t> first_row;  // size cols
  std::vector<std::uint8_t> first_col;  // size rows; first_col[0] == first_row[0]

  std::uint64_t seed_length() const { return rows + cols - 1; }
  void validate() const;
};

ToeplitzSeed draw_toeplitz_seed(std::uint64_t out_bits, std::uint64_t in_bits,
                                RandomSource& rng);

// Direct GF(2) matrix-vector product, word-packed.
std::vector<std::uint8_t> toeplitz_hash(std::span<const std::uint8_t> input,
                                        const ToeplitzSeed& seed, std::uint64_t out_bits);

// Segmented integer FFT convolution with rounding guards; agrees bit-exactly
// with the direct product.
std::vector<std::uint8_t> toeplitz_hash_fft(std::span<const std::uint8_t> input,
                                            const ToeplitzSeed& seed,
                                            std::uint64_t out_bits);

struct EpsilonBudget {
  double eps_cor = 0.0;
  double eps_sec = 0.0;
  double eps_total = 0.0;
};

// eps_cor = eps_ec; eps_sec = max(eps_pa/2 + eps_bar, eps_et + eps_at);
// eps_total = eps_sec + eps_cor. Inputs on a common decimal grid are composed
// in integer arithmetic so the published budget values come out exactly.
EpsilonBudget epsilon_budget(double eps_pa, double eps_bar, double eps_et, double eps_at,
                             double eps_ec);

struct KeyLengthParams {
  std::uint64_t n = 0;         // key-generation rounds
  double entropy_rate = 0.0;   // lower bound on conditional entropy, bits/round
  double delta_bar = 0.0;      // smoothing penalty, bits/round
  double delta_w = 0.0;        // dimension-reduction penalty, bits/round
  double leak_ec = 0.0;        // reconciliation leakage, bits
  double eps_pa = 0.0;
  double eps_ec = 0.0;
  double eps_et = 0.0;
  double eps_at = 0.0;
  double eps_bar = 0.0;

  void validate() const;
};

// max(0, floor(n*(entropy_rate - delta_bar - delta_w) - leak_ec - 2*log2(1/eps_pa)))
std::uint64_t key_length(const KeyLengthParams& params);

// (rate_a + rate_b) * symbol_rate, bits per second.
double aggregate_skr(double rate_pol1, double rate_pol2, double symbol_rate);

// External bound file carrying the entropy terms that feed key_length.
struct EntropySidecar {
  double entropy_rate = 0.0;
  double delta_bar = 0.0;
  double delta_w = 0.0;
  std::string note;
};

EntropySidecar read_entropy_sidecar(const std::filesystem::path& path);
void write_entropy_sidecar(const std::filesystem::path& path, const EntropySidecar& sidecar);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t toeplitz_seed_digest(const ToeplitzSeed& seed);

struct KeyFile {
  std::uint64_t length_bits = 0;
  std::uint64_t seed_digest = 0;
  EpsilonBudget budget;
  std::vector<std::uint8_t> bits;  // one value per bit
};

void write_key_file(const std::filesystem::path& path, const KeyFile& key);
KeyFile read_key_file(const std::filesystem::path& path);

}  // namespace cvqkd
