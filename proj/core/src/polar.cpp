#include "cvqkd/polar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cvqkd/phase_space.hpp"  // binary_entropy

namespace cvqkd {

namespace {

constexpr int kMaxLog2 = 24;

void check_n_log2(int n_log2) {
  if (n_log2 < 1 || n_log2 > kMaxLog2) {
    throw std::invalid_argument("block length exponent out of range [1, 24]: " +
                                std::to_string(n_log2));
  }
}

// Partial-order weight b_j * beta^j with beta = 2^(1/4).
double pw_weight(std::uint32_t index) {
  const double beta = std::pow(2.0, 0.25);
  double w = 0.0;
  double b = 1.0;
  for (; index != 0; index >>= 1, b *= beta) {
    if (index & 1u) w += b;
  }
  return w;
}

}  // namespace

std::vector<std::uint32_t> pw_reliability_order(int n_log2) {
  check_n_log2(n_log2);
  const std::uint32_t n = 1u << n_log2;
  std::vector<double> weight(n);
  for (std::uint32_t i = 0; i < n; ++i) weight[i] = pw_weight(i);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (weight[a] != weight[b]) return weight[a] < weight[b];
    return a < b;
  });
  return order;
}

namespace {

// Genie-aided successive cancellation over BSC(qber) with the all-zero
// codeword. With all true bits zero every partial sum is zero, so the
// g-combine reduces to a + b and only the likelihood tree is needed.
// Integer channel evidence (+1 correct, -1 flipped) keeps min-sum exact;
// genuine zero-evidence ties at a leaf are broken by a fair coin.
class GenieScErrorCounter {
 public:
  explicit GenieScErrorCounter(int n_log2)
      : n_(n_log2), size_(1u << n_log2), levels_(n_log2 + 1) {
    for (int lam = 0; lam <= n_; ++lam) levels_[lam].resize(std::size_t(1) << (n_ - lam));
  }

  void run_trial(double qber, RandomSource& rng, std::span<std::uint64_t> errors) {
    auto& channel = levels_[0];
    const auto threshold = static_cast<std::uint32_t>(std::lround(qber * 65536.0));
    std::uint64_t word = 0;
    int avail = 0;
    for (std::uint32_t i = 0; i < size_; ++i) {
      if (avail == 0) {
        word = rng.next_u64();
        avail = 4;
      }
      const auto chunk = static_cast<std::uint32_t>(word & 0xffffu);
      word >>= 16;
      --avail;
      channel[i] = chunk < threshold ? -1 : 1;
    }
    for (std::uint32_t phase = 0; phase < size_; ++phase) {
      fill_level(n_, phase);
      const std::int64_t evidence = levels_[n_][0];
      if (evidence < 0 || (evidence == 0 && (rng.next_u64() & 1u))) ++errors[phase];
    }
  }

 private:
  void fill_level(int lam, std::uint32_t phase) {
    if (lam == 0) return;
    if ((phase & 1u) == 0) fill_level(lam - 1, phase >> 1);
    const std::size_t half = std::size_t(1) << (n_ - lam);
    const auto& parent = levels_[lam - 1];
    auto& cur = levels_[lam];
    if ((phase & 1u) == 0) {
      for (std::size_t b = 0; b < half; ++b) {
        const std::int64_t x = parent[b];
        const std::int64_t y = parent[b + half];
        const std::int64_t sign = ((x < 0) == (y < 0)) ? 1 : -1;
        cur[b] = sign * std::min(std::abs(x), std::abs(y));
      }
    } else {
      for (std::size_t b = 0; b < half; ++b) cur[b] = parent[b] + parent[b + half];
    }
  }

  int n_;
  std::uint32_t size_;
  std::vector<std::vector<std::int64_t>> levels_;
};

}  // namespace

std::vector<std::uint32_t> mc_reliability_order(int n_log2, double qber,
                                                std::uint64_t trials, RandomSource& rng) {
  check_n_log2(n_log2);
  if (!(qber > 0.0) || !(qber < 0.5)) {
    throw std::invalid_argument("crossover probability must lie in (0, 0.5)");
  }
  if (trials == 0) throw std::invalid_argument("reliability estimation needs trials >= 1");
  const std::uint32_t n = 1u << n_log2;
  std::vector<std::uint64_t> errors(n, 0);
  GenieScErrorCounter counter(n_log2);
  for (std::uint64_t t = 0; t < trials; ++t) {
    RandomSource trial_rng = rng.stream(t);
    counter.run_trial(qber, trial_rng, errors);
  }
  // Many indices see zero errors at finite sample sizes; rank those (and exact
  // count ties generally) by the deterministic partial-order weight.
  std::vector<double> weight(n);
  for (std::uint32_t i = 0; i < n; ++i) weight[i] = pw_weight(i);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (errors[a] != errors[b]) return errors[a] > errors[b];
    if (weight[a] != weight[b]) return weight[a] < weight[b];
    return a < b;
  });
  return order;
}

PolarCode code_from_order(std::span<const std::uint32_t> ascending_reliability,
                          int n_log2, std::uint32_t dimension, std::string tag) {
  check_n_log2(n_log2);
  const std::uint32_t n = 1u << n_log2;
  if (ascending_reliability.size() != n) {
    throw std::invalid_argument("reliability order must list every position exactly once");
  }
  if (dimension < 1 || dimension > n) {
    throw std::invalid_argument("code dimension must lie in [1, block length]");
  }
  PolarCode code;
  code.n_log2 = n_log2;
  code.dimension = dimension;
  code.construction = std::move(tag);
  code.is_frozen.assign(n, 1);
  code.info_set.assign(ascending_reliability.end() - dimension, ascending_reliability.end());
  std::sort(code.info_set.begin(), code.info_set.end());
  for (const std::uint32_t i : code.info_set) {
    if (i >= n || !code.is_frozen[i]) {
      throw std::invalid_argument("reliability order contains an invalid or repeated index");
    }
    code.is_frozen[i] = 0;
  }
  code.frozen_set.reserve(n - dimension);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (code.is_frozen[i]) code.frozen_set.push_back(i);
  }
  return code;
}

PolarCode construct_pw(int n_log2, std::uint32_t dimension) {
  const auto order = pw_reliability_order(n_log2);
  return code_from_order(order, n_log2, dimension, "pw");
}

PolarCode construct_monte_carlo(int n_log2, std::uint32_t dimension, double qber,
                                std::uint64_t trials, RandomSource& rng) {
  if (trials < 10000) {
    throw std::invalid_argument("reliability estimation needs trials >= 10^4");
  }
  const auto order = mc_reliability_order(n_log2, qber, trials, rng);
  return code_from_order(order, n_log2, dimension, "mc");
}

void polar_transform_inplace(std::span<std::uint8_t> bits) {
  const std::size_t n = bits.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw std::invalid_argument("transform length must be a power of two");
  }
  for (std::size_t len = 1; len < n; len <<= 1) {
    for (std::size_t block = 0; block < n; block += 2 * len) {
      for (std::size_t j = 0; j < len; ++j) {
        bits[block + j] ^= bits[block + j + len];
      }
    }
  }
}

std::vector<std::uint8_t> polar_transform(std::vector<std::uint8_t> bits) {
  polar_transform_inplace(bits);
  return bits;
}

std::uint32_t code_dimension(int n_log2, double beta_qkd, double qber, int crc_len) {
  check_n_log2(n_log2);
  if (!(beta_qkd > 0.0) || beta_qkd > 1.0) {
    throw std::invalid_argument("reconciliation efficiency must lie in (0, 1]");
  }
  if (!(qber > 0.0) || !(qber < 0.5)) {
    throw std::invalid_argument("crossover probability must lie in (0, 0.5)");
  }
  if (crc_len < 0) throw std::invalid_argument("crc length must be non-negative");
  const double n = static_cast<double>(1u << n_log2);
  const double capacity = 1.0 - binary_entropy(qber);
  const auto payload = static_cast<std::int64_t>(std::floor(beta_qkd * capacity * n));
  if (payload < 1) {
    throw std::invalid_argument("requested operating point leaves no payload bits");
  }
  const std::int64_t k = payload + crc_len;
  if (k > static_cast<std::int64_t>(1u << n_log2)) {
    throw std::invalid_argument("dimension exceeds the block length");
  }
  return static_cast<std::uint32_t>(k);
}

std::uint32_t crc_bits(std::span<const std::uint8_t> bits, const CrcSpec& spec) {
  if (spec.length != 8 && spec.length != 16) {
    throw std::invalid_argument("crc length must be 8 or 16");
  }
  const std::uint32_t top = 1u << (spec.length - 1);
  const std::uint32_t mask = (spec.length == 32) ? 0xffffffffu : ((1u << spec.length) - 1u);
  std::uint32_t reg = 0;
  for (const std::uint8_t bit : bits) {
    if (bit > 1u) throw std::invalid_argument("crc input must be 0/1 valued");
    const bool feedback = ((reg & top) != 0) != (bit != 0);
    reg = (reg << 1) & mask;
    if (feedback) reg ^= spec.poly;
  }
  return reg;
}

namespace {

constexpr std::uint64_t kMersenne61 = (std::uint64_t(1) << 61) - 1;

std::uint64_t mod_mersenne61(std::uint64_t lo_hi_sum) {
  // Input already < 2^62; fold once more and canonicalise.
  std::uint64_t v = (lo_hi_sum & kMersenne61) + (lo_hi_sum >> 61);
  if (v >= kMersenne61) v -= kMersenne61;
  return v;
}

std::uint64_t mulmod61(std::uint64_t a, std::uint64_t b) {
  const unsigned __int128 prod = static_cast<unsigned __int128>(a) * b;
  const auto lo = static_cast<std::uint64_t>(prod & kMersenne61);
  const auto hi = static_cast<std::uint64_t>(prod >> 61);
  return mod_mersenne61(lo + hi);
}

std::uint64_t draw_mod61(RandomSource& rng) {
  for (;;) {
    const std::uint64_t v = rng.next_u64() >> 3;  // 61 uniform bits
    if (v < kMersenne61) return v;
  }
}

}  // namespace

BlockHashKey draw_hash_key(RandomSource& rng) {
  BlockHashKey key;
  key.k = draw_mod61(rng);
  key.k2 = draw_mod61(rng);
  key.k3 = draw_mod61(rng);
  return key;
}

std::uint32_t block_hash(std::span<const std::uint8_t> bits, const BlockHashKey& key,
                         std::uint32_t n_hash) {
  if (n_hash < 1 || n_hash > 32) throw std::invalid_argument("hash width must lie in [1, 32]");
  // Pack into 32-bit limbs (LSB-first inside a limb) and evaluate the keyed
  // polynomial sum limb_t * k^(T-t) by Horner's rule over GF(2^61 - 1).
  std::uint64_t acc = 0;
  const std::size_t limbs = (bits.size() + 31) / 32;
  for (std::size_t t = 0; t < limbs; ++t) {
    std::uint64_t limb = 0;
    const std::size_t base = 32 * t;
    const std::size_t end = std::min(bits.size(), base + 32);
    for (std::size_t i = base; i < end; ++i) {
      if (bits[i] > 1u) throw std::invalid_argument("hash input must be 0/1 valued");
      limb |= static_cast<std::uint64_t>(bits[i] & 1u) << (i - base);
    }
    acc = mod_mersenne61(mulmod61(acc, key.k) + limb);
  }
  // Affine output mixing spreads the 61-bit value before truncation.
  const std::uint64_t mixed = mod_mersenne61(mulmod61(acc, key.k2) + key.k3);
  const auto folded = static_cast<std::uint32_t>(mixed ^ (mixed >> 32));
  return n_hash == 32 ? folded : (folded & ((1u << n_hash) - 1u));
}

void ReconcileConfig::validate() const {
  if (list_size < 1 || list_size > 128 || (list_size & (list_size - 1)) != 0) {
    throw std::invalid_argument("list size must be a power of two in [1, 128]");
  }
  if (crc.length != 8 && crc.length != 16) {
    throw std::invalid_argument("crc length must be 8 or 16");
  }
  if (n_hash < 1 || n_hash > 32) {
    throw std::invalid_argument("hash width must lie in [1, 32]");
  }
}

ReconcileResult reconcile_block(std::span<const std::uint8_t> bob_bits,
                                std::span<const std::uint8_t> alice_bits,
                                const PolarCode& code, const ReconcileConfig& cfg,
                                double qber, RandomSource& rng) {
  cfg.validate();
  const std::size_t n = code.block_length();
  if (bob_bits.size() != n || alice_bits.size() != n) {
    throw std::invalid_argument("block sizes must equal the code block length");
  }
  if (!(qber > 0.0) || !(qber < 0.5)) {
    throw std::invalid_argument("crossover probability must lie in (0, 0.5)");
  }

  // Bob's disclosure: frozen coordinates of u = transform(block), a CRC of the
  // block and a keyed verification tag.
  std::vector<std::uint8_t> u(bob_bits.begin(), bob_bits.end());
  polar_transform_inplace(u);
  const std::uint32_t crc_tx = crc_bits(bob_bits, cfg.crc);
  const BlockHashKey key = draw_hash_key(rng);
  const std::uint32_t tag_tx = block_hash(bob_bits, key, cfg.n_hash);

  // Alice decodes her block against the binary-symmetric evidence.
  const double base = std::log((1.0 - qber) / qber);
  std::vector<double> llr(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (alice_bits[i] > 1u) throw std::invalid_argument("blocks must be 0/1 valued");
    llr[i] = alice_bits[i] ? -base : base;
  }
  const auto candidates = scl_decode(llr, code, u, cfg.list_size, cfg.exact_llr);

  ReconcileResult result;
  const SclCandidate* chosen = nullptr;
  for (const auto& cand : candidates) {
    if (crc_bits(cand.block, cfg.crc) == crc_tx) {
      chosen = &cand;
      break;
    }
  }
  if (chosen != nullptr) {
    result.crc_matched = true;
    result.corrected = chosen->block;
    result.success = block_hash(result.corrected, key, cfg.n_hash) == tag_tx;
  } else {
    result.corrected = candidates.front().block;
  }
  result.disclosed_bits =
      result.success
          ? (n - code.dimension) + static_cast<std::uint64_t>(cfg.crc.length) + cfg.n_hash
          : n;
  return result;
}

double leak_ec(const LeakAccount& acct) {
  if (acct.k > acct.n_ec) throw std::invalid_argument("dimension exceeds the block length");
  if (!(acct.fer >= 0.0) || acct.fer > 1.0) {
    throw std::invalid_argument("frame error rate must lie in [0, 1]");
  }
  const double failures_real = acct.fer * static_cast<double>(acct.blocks);
  const auto failures = static_cast<std::uint64_t>(std::llround(failures_real));
  if (std::abs(failures_real - static_cast<double>(failures)) >
      1e-6 * std::max<double>(1.0, static_cast<double>(acct.blocks))) {
    throw std::invalid_argument("frame error rate is inconsistent with an integer failure count");
  }
  const std::uint64_t per_ok = acct.n_ec - acct.k + acct.n_hash;
  const unsigned __int128 total =
      static_cast<unsigned __int128>(acct.blocks - failures) * per_ok +
      static_cast<unsigned __int128>(failures) * acct.n_ec;
  return static_cast<double>(total);
}

namespace {

// log P(X <= x) for X ~ Binomial(n, p), direct log-space summation.
double binom_cdf(std::uint64_t x, std::uint64_t n, double p) {
  if (p <= 0.0) return 1.0;
  if (p >= 1.0) return x >= n ? 1.0 : 0.0;
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(static_cast<std::size_t>(x) + 1);
  for (std::uint64_t k = 0; k <= x; ++k) {
    const double dk = static_cast<double>(k);
    const double dn = static_cast<double>(n);
    const double t = lgn - std::lgamma(dk + 1.0) - std::lgamma(dn - dk + 1.0) +
                     dk * lp + (dn - dk) * lq;
    terms[static_cast<std::size_t>(k)] = t;
    max_term = std::max(max_term, t);
  }
  double sum = 0.0;
  for (const double t : terms) sum += std::exp(t - max_term);
  return std::min(1.0, std::exp(max_term) * sum);
}

// Solve binom_cdf(x, n, p) == target for p; the CDF is decreasing in p.
double invert_cdf(std::uint64_t x, std::uint64_t n, double target) {
  double lo = 0.0;
  double hi = 1.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (binom_cdf(x, n, mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::pair<double, double> clopper_pearson(std::uint64_t failures, std::uint64_t trials,
                                          double confidence) {
  if (trials == 0) throw std::invalid_argument("interval needs trials >= 1");
  if (failures > trials) throw std::invalid_argument("failures cannot exceed trials");
  if (!(confidence > 0.0) || !(confidence < 1.0)) {
    throw std::invalid_argument("confidence must lie in (0, 1)");
  }
  const double alpha = 1.0 - confidence;
  const double lo =
      failures == 0 ? 0.0 : invert_cdf(failures - 1, trials, 1.0 - alpha / 2.0);
  const double hi = failures == trials ? 1.0 : invert_cdf(failures, trials, alpha / 2.0);
  return {lo, hi};
}

FerResult fer_benchmark(const PolarCode& code, const ReconcileConfig& cfg, double qber,
                        std::uint64_t trials, RandomSource& rng) {
  cfg.validate();
  if (trials < 100) throw std::invalid_argument("frame-error benchmark needs trials >= 100");
  if (!(qber > 0.0) || !(qber < 0.5)) {
    throw std::invalid_argument("crossover probability must lie in (0, 0.5)");
  }
  const std::size_t n = code.block_length();
  FerResult out;
  out.trials = trials;
  std::vector<std::uint8_t> bob(n);
  std::vector<std::uint8_t> alice(n);
  for (std::uint64_t t = 0; t < trials; ++t) {
    RandomSource trial_rng = rng.stream(t);
    std::uint64_t word = 0;
    int avail = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (avail == 0) {
        word = trial_rng.next_u64();
        avail = 64;
      }
      bob[i] = static_cast<std::uint8_t>(word & 1u);
      word >>= 1;
      --avail;
    }
    for (std::size_t i = 0; i < n; ++i) {
      alice[i] = bob[i] ^ static_cast<std::uint8_t>(trial_rng.uniform() < qber);
    }
    const ReconcileResult res = reconcile_block(bob, alice, code, cfg, qber, trial_rng);
    if (!res.success) {
      ++out.failures;
    } else if (res.corrected != bob) {
      ++out.undetected;  // hash collision; probability 2^-n_hash per block
    }
    out.disclosed_total += res.disclosed_bits;
  }
  out.fer = static_cast<double>(out.failures) / static_cast<double>(out.trials);
  const auto ci = clopper_pearson(out.failures, out.trials);
  out.ci_lo = ci.first;
  out.ci_hi = ci.second;
  return out;
}

}  // namespace cvqkd
