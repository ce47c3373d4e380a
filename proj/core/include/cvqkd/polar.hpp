#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cvqkd/random.hpp"

namespace cvqkd {

// Code over the non-bit-reversed transform u F^{x n}, F = [[1,0],[1,1]].
struct PolarCode {
  int n_log2 = 0;
  std::uint32_t dimension = 0;               // unfrozen positions
  std::vector<std::uint32_t> info_set;       // ascending
  std::vector<std::uint32_t> frozen_set;     // ascending
  std::vector<std::uint8_t> is_frozen;       // size N lookup
  std::string construction;

  std::uint32_t block_length() const { return 1u << n_log2; }
};

// Ascending reliability (least reliable first). PW ranks by the beta-expansion
// weight sum b_j * 2^(j/4); the Monte Carlo order counts genie-aided
// successive-cancellation errors over a BSC and breaks ties by PW weight.
std::vector<std::uint32_t> pw_reliability_order(int n_log2);
std::vector<std::uint32_t> mc_reliability_order(int n_log2, double qber,
                                                std::uint64_t trials, RandomSource& rng);

PolarCode code_from_order(std::span<const std::uint32_t> ascending_reliability,
                          int n_log2, std::uint32_t dimension, std::string tag);

PolarCode construct_pw(int n_log2, std::uint32_t dimension);              // deterministic
PolarCode construct_monte_carlo(int n_log2, std::uint32_t dimension, double qber,
                                std::uint64_t trials, RandomSource& rng);

// In-place u -> u F^{x n} in natural bit order; self-inverse over GF(2).
void polar_transform_inplace(std::span<std::uint8_t> bits);
std::vector<std::uint8_t> polar_transform(std::vector<std::uint8_t> bits);

// K = floor(beta_qkd * (1 - H2(qber)) * N) + crc_len.
std::uint32_t code_dimension(int n_log2, double beta_qkd, double qber, int crc_len);

struct CrcSpec {
  int length = 8;
  std::uint32_t poly = 0x07;  // low bits of the generator, x^len implied

  static CrcSpec crc8() { return {8, 0x07}; }       // x^8 + x^2 + x + 1
  static CrcSpec crc16() { return {16, 0x1021}; }   // x^16 + x^12 + x^5 + 1
};

// Remainder of bits * x^len modulo the generator, MSB-first, zero initial state.
std::uint32_t crc_bits(std::span<const std::uint8_t> bits, const CrcSpec& spec);

// Polynomial universal hash over GF(2^61 - 1) folded to n_hash <= 32 bits;
// keyed per block for the reconciliation verification exchange.
struct BlockHashKey {
  std::uint64_t k = 0;
  std::uint64_t k2 = 0;
  std::uint64_t k3 = 0;
};

BlockHashKey draw_hash_key(RandomSource& rng);
std::uint32_t block_hash(std::span<const std::uint8_t> bits, const BlockHashKey& key,
                         std::uint32_t n_hash);

struct SclCandidate {
  std::vector<std::uint8_t> block;  // reconstructed raw-key block (codeword domain)
  double metric = 0.0;              // smaller is more likely
};

// LLR-domain list decoding. exact_llr = true uses the exact log-domain
// combine and penalty rules (better frame error rate at low code rates);
// false selects the hardware-style min-sum approximation for cross-checks.
// frozen_values has one entry per position; only frozen positions are read.
// Returns up to list_size candidates ordered by ascending metric.
std::vector<SclCandidate> scl_decode(std::span<const double> channel_llr,
                                     const PolarCode& code,
                                     std::span<const std::uint8_t> frozen_values,
                                     std::uint32_t list_size, bool exact_llr = true);

struct ReconcileConfig {
  std::uint32_t list_size = 32;  // power of two, <= 128
  bool exact_llr = true;   // exact log-domain combine; min-sum is the fast cross-check
  CrcSpec crc = CrcSpec::crc8();
  std::uint32_t n_hash = 32;

  void validate() const;
};

struct ReconcileResult {
  bool success = false;      // hash-verified reconstruction
  bool crc_matched = false;  // some candidate satisfied the transmitted CRC
  std::vector<std::uint8_t> corrected;  // Alice's reconstruction of Bob's block
  std::uint64_t disclosed_bits = 0;     // raw bits crossing the public channel
};

// Reverse reconciliation of one block: Bob discloses the frozen part of
// u = transform(bob_bits), a CRC of his block and an n_hash-bit verification
// tag; Alice list-decodes her correlated block against the BSC(qber) evidence
// log((1-qber)/qber) * (1 - 2 alice_bit), picks the best CRC-consistent
// candidate and verifies the tag. A failed verification discloses the whole
// block. rng keys the verification hash for this block.
ReconcileResult reconcile_block(std::span<const std::uint8_t> bob_bits,
                                std::span<const std::uint8_t> alice_bits,
                                const PolarCode& code, const ReconcileConfig& cfg,
                                double qber, RandomSource& rng);

// Reconciliation leakage: blocks * ((1-fer)*(n_ec - k + n_hash) + fer*n_ec),
// evaluated in integer arithmetic so that sums of per-block disclosures can be
// compared against it exactly. fer * blocks must be an integer failure count.
struct LeakAccount {
  std::uint64_t n_ec = 0;
  std::uint64_t k = 0;
  std::uint32_t n_hash = 32;
  std::uint64_t blocks = 0;
  double fer = 0.0;
};

double leak_ec(const LeakAccount& acct);

// Exact two-sided Clopper-Pearson interval at the given confidence.
std::pair<double, double> clopper_pearson(std::uint64_t failures, std::uint64_t trials,
                                          double confidence = 0.95);

struct FerResult {
  std::uint64_t trials = 0;
  std::uint64_t failures = 0;    // blocks whose verification hash rejected
  std::uint64_t undetected = 0;  // verified blocks that were still wrong
  double fer = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 1.0;
  std::uint64_t disclosed_total = 0;
};

// Synthetic BSC(qber) frame-error benchmark of reconcile_block. Trial t uses
// rng.stream(t), so results do not depend on scheduling.
FerResult fer_benchmark(const PolarCode& code, const ReconcileConfig& cfg, double qber,
                        std::uint64_t trials, RandomSource& rng);

}  // namespace cvqkd
