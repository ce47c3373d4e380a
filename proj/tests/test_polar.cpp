#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "cvqkd/phase_space.hpp"
#include "cvqkd/polar.hpp"
#include "cvqkd/random.hpp"

using namespace cvqkd;

namespace {

std::vector<std::uint8_t> random_bits(std::size_t n, RandomSource& rng) {
  std::vector<std::uint8_t> bits(n);
  for (auto& b : bits) b = static_cast<std::uint8_t>(rng.next_u64() & 1u);
  return bits;
}

std::vector<std::uint8_t> flip_with_probability(const std::vector<std::uint8_t>& bits,
                                                double p, RandomSource& rng) {
  std::vector<std::uint8_t> out = bits;
  for (auto& b : out) {
    if (rng.uniform() < p) b ^= 1u;
  }
  return out;
}

}  // namespace

TEST_CASE("polar transform reference vectors") {
  const std::vector<std::uint8_t> impulse = {0, 0, 0, 1};
  CHECK(polar_transform(impulse) == std::vector<std::uint8_t>({1, 1, 1, 1}));

  const std::vector<std::uint8_t> zeros(8, 0);
  CHECK(polar_transform(zeros) == zeros);

  CHECK_THROWS_AS((void)polar_transform(std::vector<std::uint8_t>(3, 0)),
                  std::invalid_argument);
}

TEST_CASE("polar transform is an involution") {
  RandomSource rng(71);
  for (int i = 0; i < 100; ++i) {
    const auto u = random_bits(64, rng);
    CHECK(polar_transform(polar_transform(u)) == u);
  }
}

TEST_CASE("codec round trip at production block lengths") {
  RandomSource rng(72);
  for (const int n_log2 : {10, 12}) {
    const std::size_t n = std::size_t{1} << n_log2;
    for (int i = 0; i < 1000; ++i) {
      auto u = random_bits(n, rng);
      const auto x = polar_transform(u);
      CHECK(polar_transform(x) == u);
    }
  }
}

TEST_CASE("weight-ranked construction matches brute force at n = 8") {
  // Exhaustive beta-expansion weights with beta = 2^(1/4): index i with bits
  // b_j has weight sum(b_j * beta^j).
  const double beta = std::pow(2.0, 0.25);
  std::vector<std::pair<double, std::uint32_t>> weighted;
  for (std::uint32_t i = 0; i < 8; ++i) {
    double w = 0.0;
    for (int j = 0; j < 3; ++j) {
      if ((i >> j) & 1u) w += std::pow(beta, j);
    }
    weighted.emplace_back(w, i);
  }
  std::stable_sort(weighted.begin(), weighted.end());
  const auto order = pw_reliability_order(3);  // ascending reliability
  REQUIRE(order.size() == 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(order[i] == weighted[static_cast<std::size_t>(i)].second);
  }
}

TEST_CASE("four-bit code with one information bit uses the last channel") {
  const PolarCode code = construct_pw(2, 1);
  REQUIRE(code.info_set.size() == 1);
  CHECK(code.info_set[0] == 3);
  CHECK(code.frozen_set.size() == 3);
}

TEST_CASE("constructions are deterministic and well-formed") {
  const PolarCode a = construct_pw(10, 500);
  const PolarCode b = construct_pw(10, 500);
  CHECK(a.info_set == b.info_set);

  RandomSource rng1(5), rng2(5);
  const PolarCode m1 = construct_monte_carlo(10, 400, 0.1, 10000, rng1);
  const PolarCode m2 = construct_monte_carlo(10, 400, 0.1, 10000, rng2);
  CHECK(m1.info_set == m2.info_set);

  for (const PolarCode* code : {&a, &m1}) {
    CHECK(code->block_length() == 1024);
    std::set<std::uint32_t> all(code->info_set.begin(), code->info_set.end());
    all.insert(code->frozen_set.begin(), code->frozen_set.end());
    CHECK(all.size() == 1024);  // exact partition
    for (const auto i : code->info_set) CHECK_FALSE(code->is_frozen[i]);
    for (const auto i : code->frozen_set) CHECK(code->is_frozen[i]);
  }

  CHECK_THROWS_AS((void)construct_pw(10, 0), std::invalid_argument);
  CHECK_THROWS_AS((void)construct_pw(10, 1025), std::invalid_argument);
  RandomSource rng3(6);
  CHECK_THROWS_AS((void)construct_monte_carlo(10, 400, 0.1, 9999, rng3),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)construct_monte_carlo(10, 400, 0.6, 10000, rng3),
                  std::invalid_argument);
}

TEST_CASE("code dimension accounting from the efficiency target") {
  // K = floor(beta * C * N) + CRClen with C = 1 - H2(qber), evaluated at full
  // double precision.
  const double c = 1.0 - binary_entropy(0.35);
  const auto k_expected =
      static_cast<std::uint32_t>(std::floor(0.8 * c * 65536.0)) + 8;
  CHECK(code_dimension(16, 0.8, 0.35, 8) == k_expected);
  CHECK(k_expected == 3464);  // 3456 payload bits + 8 CRC bits

  CHECK(code_dimension(10, 0.9, 0.1, 8) ==
        static_cast<std::uint32_t>(std::floor(0.9 * (1.0 - binary_entropy(0.1)) * 1024.0)) + 8);

  // Monotone in the efficiency target.
  CHECK(code_dimension(12, 0.95, 0.2, 8) > code_dimension(12, 0.80, 0.2, 8));

  CHECK_THROWS_AS((void)code_dimension(12, 0.0, 0.2, 8), std::invalid_argument);
  CHECK_THROWS_AS((void)code_dimension(12, 1.2, 0.2, 8), std::invalid_argument);
  CHECK_THROWS_AS((void)code_dimension(12, 0.8, 0.0, 8), std::invalid_argument);
}

TEST_CASE("crc reference check values") {
  // Classic check string "123456789" as MSB-first bits.
  std::vector<std::uint8_t> bits;
  for (const char ch : std::string("123456789")) {
    for (int j = 7; j >= 0; --j) {
      bits.push_back(static_cast<std::uint8_t>((ch >> j) & 1));
    }
  }
  CHECK(crc_bits(bits, CrcSpec::crc8()) == 0xF4);    // polynomial 0x07, zero init
  CHECK(crc_bits(bits, CrcSpec::crc16()) == 0x31C3); // XMODEM 0x1021, zero init
}

TEST_CASE("crc detects every single-bit corruption of a long block") {
  RandomSource rng(15);
  const auto block = random_bits(1024, rng);
  const auto reference = crc_bits(block, CrcSpec::crc8());
  auto mutated = block;
  for (std::size_t i = 0; i < mutated.size(); ++i) {
    mutated[i] ^= 1u;
    CHECK(crc_bits(mutated, CrcSpec::crc8()) != reference);
    mutated[i] ^= 1u;
  }
}

TEST_CASE("block verification hash basics") {
  RandomSource rng(16);
  const BlockHashKey key = draw_hash_key(rng);
  RandomSource rng_same(16);
  const BlockHashKey key_same = draw_hash_key(rng_same);
  CHECK(key.k == key_same.k);
  CHECK(key.k2 == key_same.k2);
  CHECK(key.k3 == key_same.k3);

  const auto block = random_bits(4096, rng);
  const std::uint32_t h = block_hash(block, key, 32);
  CHECK(block_hash(block, key, 32) == h);

  // Single-bit sensitivity across 100 random positions.
  auto mutated = block;
  for (int i = 0; i < 100; ++i) {
    const auto pos = static_cast<std::size_t>(rng.next_u64() % mutated.size());
    mutated[pos] ^= 1u;
    CHECK(block_hash(mutated, key, 32) != h);
    mutated[pos] ^= 1u;
  }

  // Width control: a 16-bit hash fits in 16 bits.
  const std::uint32_t h16 = block_hash(block, key, 16);
  CHECK(h16 < (1u << 16));
  CHECK_THROWS_AS((void)block_hash(block, key, 0), std::invalid_argument);
  CHECK_THROWS_AS((void)block_hash(block, key, 33), std::invalid_argument);
}

TEST_CASE("noiseless reconciliation succeeds with exact disclosure accounting") {
  RandomSource rng(17);
  const PolarCode code = construct_pw(10, code_dimension(10, 0.8, 0.35, 8));
  ReconcileConfig cfg;  // CRC-8, 32-bit hash, list 32
  for (int i = 0; i < 50; ++i) {
    const auto bob = random_bits(1024, rng);
    const ReconcileResult r = reconcile_block(bob, bob, code, cfg, 0.05, rng);
    REQUIRE(r.success);
    CHECK(r.crc_matched);
    CHECK(r.corrected == bob);
    CHECK(r.disclosed_bits == (1024 - code.dimension) + 8 + 32);
  }
}

TEST_CASE("failed verification discloses the whole block") {
  RandomSource rng(18);
  // An impossible operating point: half the bits flipped, tiny redundancy.
  const PolarCode code = construct_pw(10, 900);
  ReconcileConfig cfg;
  const auto bob = random_bits(1024, rng);
  const auto alice = flip_with_probability(bob, 0.45, rng);
  const ReconcileResult r = reconcile_block(bob, alice, code, cfg, 0.45, rng);
  if (!r.success) {
    CHECK(r.disclosed_bits == 1024);
  }
}

TEST_CASE("successful reconciliation always returns the reference block") {
  // At a high-failure operating point, scan many noisy trials: every success
  // must deliver exactly Bob's block (the verification hash removes CRC-lucky
  // impostors), and failures must be flagged.
  RandomSource rng(19);
  const PolarCode code = construct_pw(10, code_dimension(10, 0.95, 0.35, 8));
  ReconcileConfig cfg;
  int successes = 0, failures = 0;
  for (int i = 0; i < 200; ++i) {
    const auto bob = random_bits(1024, rng);
    const auto alice = flip_with_probability(bob, 0.35, rng);
    const ReconcileResult r = reconcile_block(bob, alice, code, cfg, 0.35, rng);
    if (r.success) {
      ++successes;
      REQUIRE(r.corrected == bob);
    } else {
      ++failures;
      CHECK(r.disclosed_bits == 1024);
    }
  }
  CHECK(failures > 0);  // the point is genuinely stressed
}

TEST_CASE("reconcile validates its inputs") {
  RandomSource rng(20);
  const PolarCode code = construct_pw(10, 512);
  ReconcileConfig cfg;
  const auto bob = random_bits(1024, rng);
  CHECK_THROWS_AS(
      (void)reconcile_block(random_bits(512, rng), bob, code, cfg, 0.1, rng),
      std::invalid_argument);
  CHECK_THROWS_AS((void)reconcile_block(bob, bob, code, cfg, 0.0, rng),
                  std::invalid_argument);
  ReconcileConfig bad = cfg;
  bad.list_size = 3;
  CHECK_THROWS_AS((void)reconcile_block(bob, bob, code, bad, 0.1, rng),
                  std::invalid_argument);
}

TEST_CASE("leak accounting formula") {
  // Total failure: everything is disclosed.
  LeakAccount all_failed;
  all_failed.n_ec = 1024;
  all_failed.k = 500;
  all_failed.n_hash = 32;
  all_failed.blocks = 10;
  all_failed.fer = 1.0;
  CHECK(leak_ec(all_failed) == 10.0 * 1024.0);

  // Published worked example: 2^16 block, 3463 accounted key bits, 32-bit
  // hash, zero failures -> 62105 disclosed bits per block.
  LeakAccount example;
  example.n_ec = 65536;
  example.k = 3463;
  example.n_hash = 32;
  example.blocks = 1;
  example.fer = 0.0;
  CHECK(leak_ec(example) == 62105.0);

  // Shannon-limit corner: beta = 1, no hash.
  const double c = 1.0 - binary_entropy(0.2);
  const auto k = static_cast<std::uint32_t>(std::floor(c * 4096.0));
  LeakAccount corner;
  corner.n_ec = 4096;
  corner.k = k;
  corner.n_hash = 0;
  corner.blocks = 7;
  corner.fer = 0.0;
  CHECK(leak_ec(corner) == 7.0 * (4096.0 - k));
  CHECK(leak_ec(corner) ==
        doctest::Approx(7.0 * 4096.0 * (1.0 - c)).epsilon(1e-3));

  // Mixed case evaluated by hand: 5 blocks, one failure.
  LeakAccount mixed;
  mixed.n_ec = 1024;
  mixed.k = 300;
  mixed.n_hash = 32;
  mixed.blocks = 5;
  mixed.fer = 0.2;
  CHECK(leak_ec(mixed) == 4.0 * (1024 - 300 + 32) + 1.0 * 1024.0);

  LeakAccount inconsistent = mixed;
  inconsistent.fer = 0.21;  // 1.05 failures is not an integer
  CHECK_THROWS_AS((void)leak_ec(inconsistent), std::invalid_argument);
  LeakAccount bad = mixed;
  bad.fer = 1.5;
  CHECK_THROWS_AS((void)leak_ec(bad), std::invalid_argument);
}

TEST_CASE("confidence intervals match reference values") {
  const auto mid = clopper_pearson(20, 1000, 0.95);
  CHECK(mid.first == doctest::Approx(0.0122582680).epsilon(1e-5));
  CHECK(mid.second == doctest::Approx(0.0307200327).epsilon(1e-5));

  const auto zero = clopper_pearson(0, 500, 0.95);
  CHECK(zero.first == 0.0);
  CHECK(zero.second == doctest::Approx(0.0073506101).epsilon(1e-5));

  const auto one = clopper_pearson(1, 500, 0.95);
  CHECK(one.first == doctest::Approx(5.0634334e-05).epsilon(1e-4));
  CHECK(one.second == doctest::Approx(0.0110924769).epsilon(1e-5));

  const auto full = clopper_pearson(500, 500, 0.95);
  CHECK(full.first == doctest::Approx(0.9926493899).epsilon(1e-6));
  CHECK(full.second == 1.0);

  CHECK_THROWS_AS((void)clopper_pearson(5, 0, 0.95), std::invalid_argument);
  CHECK_THROWS_AS((void)clopper_pearson(5, 4, 0.95), std::invalid_argument);
}

TEST_CASE("frame-error benchmark bookkeeping is exact and reproducible") {
  RandomSource rng(301);
  const PolarCode code = construct_pw(10, code_dimension(10, 0.9, 0.35, 8));
  ReconcileConfig cfg;
  const FerResult r = fer_benchmark(code, cfg, 0.35, 120, rng);
  CHECK(r.trials == 120);
  CHECK(r.fer == doctest::Approx(static_cast<double>(r.failures) / 120.0));
  CHECK(r.undetected == 0);

  // Disclosed bits summed inside the run replay exactly through the leak
  // formula with the observed error rate and per-payload accounting.
  LeakAccount acct;
  acct.n_ec = 1024;
  acct.k = code.dimension - static_cast<std::uint32_t>(cfg.crc.length);
  acct.n_hash = cfg.n_hash;
  acct.blocks = r.trials;
  acct.fer = r.fer;
  CHECK(leak_ec(acct) == static_cast<double>(r.disclosed_total));

  RandomSource rng_again(301);
  const FerResult r2 = fer_benchmark(code, cfg, 0.35, 120, rng_again);
  CHECK(r2.failures == r.failures);
  CHECK(r2.disclosed_total == r.disclosed_total);

  RandomSource rng_small(1);
  CHECK_THROWS_AS((void)fer_benchmark(code, cfg, 0.35, 99, rng_small),
                  std::invalid_argument);
}

TEST_CASE("informed construction beats weight ranking at a stressed point") {
  // 1000 frames at crossover 0.1 with 90% efficiency on 1024-bit blocks:
  // the genie-trained frozen set must not lose to the analytic ranking.
  RandomSource setup(41);
  const std::uint32_t k = code_dimension(10, 0.9, 0.1, 8);
  const PolarCode pw_code = construct_pw(10, k);
  const PolarCode mc_code = construct_monte_carlo(10, k, 0.1, 100000, setup);
  ReconcileConfig cfg;

  RandomSource bench_pw(42), bench_mc(42);  // paired noise
  const FerResult pw = fer_benchmark(pw_code, cfg, 0.1, 1000, bench_pw);
  const FerResult mc = fer_benchmark(mc_code, cfg, 0.1, 1000, bench_mc);
  CHECK(mc.failures < pw.failures);
  CHECK(mc.ci_hi < pw.ci_lo);  // separation, not just ordering
}

TEST_CASE("a cold construction point keeps the error rate near zero") {
  // Large margin (50% efficiency at crossover 0.05): no failures expected.
  RandomSource setup(43);
  const PolarCode code =
      construct_monte_carlo(10, code_dimension(10, 0.5, 0.05, 8), 0.05, 10000, setup);
  ReconcileConfig cfg;
  RandomSource bench(44);
  const FerResult r = fer_benchmark(code, cfg, 0.05, 100, bench);
  CHECK(r.failures == 0);
}

TEST_CASE("list size improves the frame error rate monotonically") {
  RandomSource setup(45);
  const std::uint32_t k = code_dimension(12, 0.85, 0.3, 8);
  const PolarCode code = construct_monte_carlo(12, k, 0.3, 100000, setup);

  FerResult results[3];
  const unsigned sizes[3] = {1, 8, 32};
  for (int i = 0; i < 3; ++i) {
    ReconcileConfig cfg;
    cfg.list_size = sizes[i];
    RandomSource bench(46);  // paired noise across list sizes
    results[i] = fer_benchmark(code, cfg, 0.3, 250, bench);
  }
  CHECK(results[0].fer >= results[1].fer);
  CHECK(results[1].fer >= results[2].fer);
  // The single-path and 32-path intervals must separate cleanly; the middle
  // point may brush either neighbour, but its interval must stay ordered.
  CHECK(results[2].ci_hi < results[0].ci_lo);
  CHECK(results[1].ci_lo <= results[0].ci_lo);
  CHECK(results[2].ci_lo <= results[1].ci_lo);
  CHECK(results[2].ci_hi <= results[1].ci_hi);
  CHECK(results[1].ci_hi <= results[0].ci_hi);
}

TEST_CASE("exact and min-sum path metrics agree on easy channels") {
  RandomSource rng(47);
  const PolarCode code = construct_pw(10, code_dimension(10, 0.7, 0.1, 8));
  for (int i = 0; i < 30; ++i) {
    const auto bob = random_bits(1024, rng);
    const auto alice = flip_with_probability(bob, 0.02, rng);
    ReconcileConfig exact;
    exact.exact_llr = true;
    ReconcileConfig minsum;
    minsum.exact_llr = false;
    RandomSource a(100 + i), b(100 + i);
    const ReconcileResult re = reconcile_block(bob, alice, code, exact, 0.02, a);
    const ReconcileResult rm = reconcile_block(bob, alice, code, minsum, 0.02, b);
    REQUIRE(re.success);
    REQUIRE(rm.success);
    CHECK(re.corrected == rm.corrected);
  }
}
