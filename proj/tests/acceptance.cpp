// Release gate: one verdict line per criterion, exit code = number of
// failures. Each criterion is self-contained, uses fixed seeds, and checks
// the library against independently computed targets.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cvqkd/channel.hpp"
#include "cvqkd/experiment.hpp"
#include "cvqkd/key_map.hpp"
#include "cvqkd/phase_space.hpp"
#include "cvqkd/polar.hpp"
#include "cvqkd/privacy.hpp"
#include "cvqkd/protocol_tests.hpp"
#include "cvqkd/random.hpp"

namespace {

using namespace cvqkd;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, ...) {
  va_list args;
  va_start(args, format);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// 1. Security-parameter composition reproduces the published budget exactly.

Verdict criterion_epsilon_budget() {
  const EpsilonBudget b = epsilon_budget(2e-11, 7e-11, 1e-11, 7e-11, 2e-11);
  const bool pass = b.eps_sec == 8e-11 && b.eps_total == 1e-10 && b.eps_cor == 2e-11;
  return {pass, fmt("eps_sec=%.3g eps_total=%.3g eps_cor=%.3g", b.eps_sec,
                    b.eps_total, b.eps_cor)};
}

// ---------------------------------------------------------------------------
// 2. Fiber transmittance at the reference link.

Verdict criterion_fiber_transmittance() {
  const double t = fiber_transmittance(10.0, 0.198);
  const bool pass = std::abs(t - 0.63387) <= 1e-5;
  return {pass, fmt("T(10 km, 0.198 dB/km)=%.6f target 0.63387+-1e-5", t)};
}

// ---------------------------------------------------------------------------
// 3. Reconciliation frame errors at the hard operating point (crossover 0.35,
//    block 2^16) must be statistically compatible with the reference failure
//    window [0.8%, 5%], and the easy point (crossover 0.10, block 2^12) must
//    decode essentially error-free.

constexpr std::uint64_t kHardConstructionTrials = 1'000'000;

Verdict criterion_fer_operating_point() {
  RandomSource rng(0xACCE5501ull);

  ReconcileConfig cfg;
  cfg.list_size = 32;
  cfg.exact_llr = true;
  cfg.crc = CrcSpec::crc8();
  cfg.n_hash = 32;

  RandomSource hard_rng = rng.stream(1);
  const PolarCode hard = construct_monte_carlo(
      16, code_dimension(16, 0.80, 0.35, 8), 0.35, kHardConstructionTrials, hard_rng);
  RandomSource hard_trials = rng.stream(2);
  const FerResult hr = fer_benchmark(hard, cfg, 0.35, 500, hard_trials);
  const bool hard_ok = hr.ci_lo <= 0.05 && hr.ci_hi >= 0.008;

  RandomSource easy_rng = rng.stream(3);
  const PolarCode easy = construct_monte_carlo(
      12, code_dimension(12, 0.80, 0.10, 8), 0.10, 100'000, easy_rng);
  RandomSource easy_trials = rng.stream(4);
  const FerResult er = fer_benchmark(easy, cfg, 0.10, 500, easy_trials);
  const bool easy_ok = er.fer <= 0.01;

  return {hard_ok && easy_ok,
          fmt("hard %llu/%llu fer=%.4f ci=[%.4f,%.4f] vs [0.008,0.05]; "
              "easy %llu/%llu fer=%.4f (<=0.01)",
              static_cast<unsigned long long>(hr.failures),
              static_cast<unsigned long long>(hr.trials), hr.fer, hr.ci_lo, hr.ci_hi,
              static_cast<unsigned long long>(er.failures),
              static_cast<unsigned long long>(er.trials), er.fer)};
}

// ---------------------------------------------------------------------------
// 4. Frame error rate grows monotonically in the rate factor at block 2^15,
//    with disjoint confidence intervals between neighbouring cells.

Verdict criterion_fer_monotone_in_rate() {
  RandomSource rng(0xACCE5504ull);
  RandomSource order_rng = rng.stream(1);
  const std::vector<std::uint32_t> order =
      mc_reliability_order(15, 0.35, 100'000, order_rng);

  ReconcileConfig cfg;
  cfg.list_size = 32;
  cfg.exact_llr = true;

  const std::array<double, 4> betas{0.80, 0.85, 0.90, 0.95};
  std::array<FerResult, 4> res;
  std::ostringstream detail;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    const std::uint32_t dim = code_dimension(15, betas[i], 0.35, 8);
    const PolarCode code = code_from_order(order, 15, dim, "mc");
    RandomSource cell_rng = rng.stream(10 + i);
    res[i] = fer_benchmark(code, cfg, 0.35, 300, cell_rng);
    detail << fmt("%sb=%.2f %llu/300 [%.3f,%.3f]", i ? "; " : "", betas[i],
                  static_cast<unsigned long long>(res[i].failures), res[i].ci_lo,
                  res[i].ci_hi);
  }
  bool pass = true;
  for (std::size_t i = 0; i + 1 < res.size(); ++i) {
    if (!(res[i].fer < res[i + 1].fer)) pass = false;
    if (!(res[i].ci_hi < res[i + 1].ci_lo)) pass = false;
  }
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 5. Secret-key-rate bookkeeping: the closed-form aggregate and the full
//    keyrate pipeline both reproduce the published per-symbol rates.

Verdict criterion_keyrate() {
  const double direct = aggregate_skr(1.37e-2, 1.66e-2, 40e9);
  bool pass = direct >= 1.210e9 && direct <= 1.215e9;

  namespace fs = std::filesystem;
  const fs::path dir =
      fs::temp_directory_path() /
      fmt("cvqkd-acceptance-%llu",
          static_cast<unsigned long long>(
              std::chrono::steady_clock::now().time_since_epoch().count()));
  fs::create_directories(dir);

  EntropySidecar lane1;
  lane1.entropy_rate = 1.9065763937974884;
  EntropySidecar lane2;
  lane2.entropy_rate = 1.9107192509403454;
  write_entropy_sidecar(dir / "lane1.json", lane1);
  write_entropy_sidecar(dir / "lane2.json", lane2);

  ExperimentConfig cfg = default_config();
  cfg.keyrate.rounds_total = 10'000'000'000ull;
  cfg.keyrate.testing_ratio = 0.3;
  cfg.keyrate.qber = 0.3496519147293566;
  cfg.keyrate.postselect_fraction = 0.9957871823303222;
  cfg.keyrate.n_log2 = 16;
  cfg.keyrate.beta_qkd = 0.80;
  cfg.keyrate.crc_len = 8;
  cfg.keyrate.n_hash = 32;
  cfg.keyrate.fer = 0.0;
  cfg.keyrate.symbol_rate_baud = 40e9;
  cfg.keyrate.sidecar = (dir / "lane1.json").string();
  cfg.keyrate.sidecar_second = (dir / "lane2.json").string();

  const RunOutcome out = run_keyrate(cfg, RunOptions{});
  const auto& lanes = out.report.at("lanes");
  const double r1 = lanes.at(0).at("per_symbol_rate").get<double>();
  const double r2 = lanes.at(1).at("per_symbol_rate").get<double>();
  const double agg = out.report.at("aggregate_skr_bits_per_s").get<double>();
  const std::uint64_t leak = lanes.at(0).at("leak_ec_bits").get<std::uint64_t>();

  // Three significant figures: half a unit in the third digit.
  if (std::abs(r1 - 1.37e-2) > 5e-5) pass = false;
  if (std::abs(r2 - 1.66e-2) > 5e-5) pass = false;
  if (!(agg >= 1.210e9 && agg <= 1.215e9)) pass = false;
  if (leak != 13'209'034'685ull) pass = false;

  fs::remove_all(dir);
  return {pass, fmt("closed-form %.4g bit/s; pipeline rates %.4e / %.4e, "
                    "aggregate %.4g, leak %llu",
                    direct, r1, r2, agg, static_cast<unsigned long long>(leak))};
}

// ---------------------------------------------------------------------------
// 6. The bias-corrected displaced moment estimator recovers the photon-number
//    moments of a known coherent state within five standard errors.

Verdict criterion_moment_estimator() {
  const ComplexAmplitude delta = qpsk_state(0, 0.85);
  ChannelParams ideal;
  ideal.eta_ch = 1.0;
  ideal.eta_d = 1.0;
  ideal.nu_el = 0.0;
  ideal.excess_noise = 0.0;

  const std::size_t m = 1'000'000;
  RandomSource rng(0xACCE5506ull);
  std::vector<QuadratureSample> samples(m);
  for (auto& s : samples) s = measure_heterodyne(delta, ideal, rng);

  const DisplacedMoments est =
      estimate_displaced_moments(samples, ComplexAmplitude{0.0, 0.0});

  // Empirical standard errors of the two per-sample statistics.
  double m1 = 0.0, m2 = 0.0, v1 = 0.0, v2 = 0.0;
  for (const auto& s : samples) {
    const double r2 = std::norm(s.gamma());
    const double s1 = r2 - 1.0;
    const double s2 = r2 * r2 - 3.0 * r2 + 1.0;
    m1 += s1;
    m2 += s2;
    v1 += s1 * s1;
    v2 += s2 * s2;
  }
  m1 /= static_cast<double>(m);
  m2 /= static_cast<double>(m);
  v1 = v1 / static_cast<double>(m) - m1 * m1;
  v2 = v2 / static_cast<double>(m) - m2 * m2;
  const double se1 = std::sqrt(v1 / static_cast<double>(m));
  const double se2 = std::sqrt(v2 / static_cast<double>(m));

  const double n_true = std::norm(delta);
  const double n2_true = std::norm(delta) * std::norm(delta) + std::norm(delta);
  const bool pass = est.count == m && std::abs(est.mean_n - n_true) <= 5.0 * se1 &&
                    std::abs(est.mean_n2 - n2_true) <= 5.0 * se2;
  return {pass, fmt("mean_n=%.6f (true %.6f, 5se=%.2g); mean_n2=%.6f (true %.6f, "
                    "5se=%.2g)",
                    est.mean_n, n_true, 5.0 * se1, est.mean_n2, n2_true, 5.0 * se2)};
}

// ---------------------------------------------------------------------------
// 7. Acceptance-test replay of the reference dual-polarization run: the
//    recorded observations pass against the other polarization's
//    expectations, and pushing any single observation past its allowance
//    trips exactly that check.

Verdict criterion_acceptance_replay() {
  const std::array<double, 4> exp_n{2.48e-4, 7.15e-4, 3.17e-3, 2.68e-3};
  const std::array<double, 4> obs_n{1.95e-3, 1.26e-3, 3.08e-3, 3.18e-3};
  const std::array<double, 4> exp_n2{1.76e-3, 4.28e-4, 3.09e-3, 3.42e-3};
  const std::array<double, 4> obs_n2{2.85e-3, 2.71e-4, 2.95e-3, 5.78e-3};
  const std::uint64_t m = 750'000'000ull;
  const double limit = 7.0;

  ChannelParams ch;  // reference channel: defaults
  AcceptanceSet set;
  set.t_factor = 1.5;
  set.eps_at = 7e-11;
  set.two_sided = false;
  std::array<DisplacedMoments, 4> observed{};
  for (int s = 0; s < 4; ++s) {
    set.states[s].beta = received_mean(qpsk_state(s, 0.85), ch);
    set.states[s].n = {exp_n[s], limit * limit, m};
    set.states[s].n2 = {exp_n2[s], limit * limit * limit * limit, m};
    observed[s] = {obs_n[s], obs_n2[s], m};
  }

  const AcceptanceVerdict base = acceptance_test(observed, set);
  bool pass = base.pass;
  for (const auto& c : base.checks) pass = pass && c.pass;

  // Perturb each observation just past expected + t*mu: exactly one check
  // must fail and the verdict must flip to abort.
  int aborts = 0;
  for (int s = 0; s < 4 && pass; ++s) {
    for (int o = 0; o < 2; ++o) {
      auto pert = observed;
      const double x = o == 0 ? limit * limit : limit * limit * limit * limit;
      const double mu = mu_bound(x, m, set.eps_at);
      const double expd = o == 0 ? exp_n[s] : exp_n2[s];
      const double bad = expd + set.t_factor * mu + 1e-9;
      if (o == 0) {
        pert[s].mean_n = bad;
      } else {
        pert[s].mean_n2 = bad;
      }
      const AcceptanceVerdict v = acceptance_test(pert, set);
      if (v.pass) {
        pass = false;
        break;
      }
      ++aborts;
      for (const auto& c : v.checks) {
        const bool target = c.state == s && c.observable == o;
        if (c.pass == target) {
          pass = false;
          break;
        }
      }
    }
  }
  return {pass, fmt("8/8 recorded checks pass; %d/8 single-observation "
                    "perturbations abort on the right check",
                    aborts)};
}

// ---------------------------------------------------------------------------
// 8. Simulated postselection fraction agrees with the deterministic
//    2-D Gaussian quadrature oracle within three binomial sigma.

Verdict criterion_postselection_oracle() {
  ChannelParams ch;  // reference channel
  KeyMapParams km;   // delta_r 0.1, detection limit 7
  const std::uint64_t total = 10'000'000;
  const std::uint64_t chunk = 1'000'000;

  RandomSource rng(0xACCE5508ull);
  std::array<ComplexAmplitude, 4> means;
  for (int s = 0; s < 4; ++s) means[s] = received_mean(qpsk_state(s, 0.85), ch);

  std::vector<QuadratureSample> samples(chunk);
  std::vector<std::uint8_t> symbols(chunk);
  std::uint64_t kept = 0;
  for (std::uint64_t done = 0; done < total; done += chunk) {
    for (std::uint64_t i = 0; i < chunk; ++i) {
      symbols[i] = static_cast<std::uint8_t>(rng.next_u64() & 3u);
      samples[i] = measure_heterodyne(means[symbols[i]], ch, rng);
    }
    const SiftResult sr = sift(samples, symbols, km);
    kept += sr.kept;
  }
  const double measured = static_cast<double>(kept) / static_cast<double>(total);

  double oracle = 0.0;
  for (int s = 0; s < 4; ++s) {
    const ComplexAmplitude qp_mean{2.0 * means[s].real(), 2.0 * means[s].imag()};
    oracle += postselect_fraction_oracle(qp_mean, ch.heterodyne_variance(), km) / 4.0;
  }
  const double sigma =
      std::sqrt(oracle * (1.0 - oracle) / static_cast<double>(total));
  const bool pass = std::abs(measured - oracle) <= 3.0 * sigma;
  return {pass, fmt("measured %.7f vs oracle %.7f (|diff|=%.2e, 3sigma=%.2e)",
                    measured, oracle, std::abs(measured - oracle), 3.0 * sigma)};
}

// ---------------------------------------------------------------------------
// 9. Noiseless reconciliation is lossless and its disclosure accounting is
//    exact on every block.

Verdict criterion_disclosure_accounting() {
  RandomSource rng(0xACCE5509ull);
  const struct {
    int n_log2;
    std::uint32_t list_size;
  } cells[] = {{10, 32}, {16, 1}};

  std::uint64_t blocks_ok = 0, blocks_total = 0;
  bool pass = true;
  for (const auto& cell : cells) {
    const std::uint32_t dim = code_dimension(cell.n_log2, 0.80, 0.35, 8);
    const PolarCode code = construct_pw(cell.n_log2, dim);
    ReconcileConfig cfg;
    cfg.list_size = cell.list_size;
    cfg.exact_llr = true;
    const std::uint64_t expected_disclosed =
        (code.block_length() - code.dimension) +
        static_cast<std::uint64_t>(cfg.crc.length) + cfg.n_hash;

    const std::size_t n = code.block_length();
    std::vector<std::uint8_t> bob(n);
    for (int t = 0; t < 1000; ++t) {
      RandomSource block_rng = rng.stream(cell.n_log2 * 10'000 + t);
      for (auto& b : bob) b = block_rng.next_u64() & 1u;
      const ReconcileResult res =
          reconcile_block(bob, bob, code, cfg, 0.01, block_rng);
      ++blocks_total;
      if (res.success && res.corrected == bob &&
          res.disclosed_bits == expected_disclosed) {
        ++blocks_ok;
      } else {
        pass = false;
      }
    }
  }
  return {pass, fmt("%llu/%llu blocks recovered with exact disclosure",
                    static_cast<unsigned long long>(blocks_ok),
                    static_cast<unsigned long long>(blocks_total))};
}

// ---------------------------------------------------------------------------
// 10. Noiseless DSP loopback is error-free with negligible residual
//     intersymbol interference, and dispersion compensation inverts the
//     applied dispersion to numerical precision.

Verdict criterion_dsp_loopback() {
  ExperimentConfig cfg = default_config();
  cfg.seed = 77;
  cfg.dsp.symbols = 10'000;
  const RunOutcome out = run_dsp_loopback(cfg, RunOptions{});
  const auto& rep = out.report;
  const std::uint64_t errors = rep.at("symbol_errors").get<std::uint64_t>();
  const double evm = rep.at("evm_rms").get<double>();
  bool pass = errors == 0 && evm < 1e-3;

  RandomSource rng(0xACCE5510ull);
  Waveform w;
  w.sample_rate = 80e9;
  w.samples.resize(4096);
  for (auto& s : w.samples) {
    const auto [a, b] = rng.normal_pair();
    s = {a, b};
  }
  CdParams cd;
  cd.length_km = 10.0;
  const Waveform round = cd_compensate(cd_apply(w, cd), cd);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    num += std::norm(round.samples[i] - w.samples[i]);
    den += std::norm(w.samples[i]);
  }
  const double rel_rms = std::sqrt(num / den);
  pass = pass && rel_rms < 1e-6;
  return {pass, fmt("loopback errors=%llu evm=%.2e; dispersion round-trip "
                    "rel-rms=%.2e",
                    static_cast<unsigned long long>(errors), evm, rel_rms)};
}

// ---------------------------------------------------------------------------
// 11. The FFT-based Toeplitz extractor matches the direct product bit for
//     bit, and its two-input collision rate over random seeds stays within
//     the universal-hash bound.

Verdict criterion_toeplitz() {
  RandomSource rng(0xACCE5511ull);

  int equal_cases = 0;
  const int cases = 1000;
  for (int t = 0; t < cases; ++t) {
    RandomSource case_rng = rng.stream(t);
    std::uint64_t m = 1 + case_rng.next_u64() % 4096;
    std::uint64_t l = 1 + case_rng.next_u64() % std::min<std::uint64_t>(96, m);
    if (t < 3) {  // stress the segmented convolution path
      l = 64 + static_cast<std::uint64_t>(t);
      m = (1ull << 18) + 17 * static_cast<std::uint64_t>(t);
    }
    std::vector<std::uint8_t> input(m);
    for (auto& b : input) b = case_rng.next_u64() & 1u;
    const ToeplitzSeed seed = draw_toeplitz_seed(l, m, case_rng);
    if (toeplitz_hash(input, seed, l) == toeplitz_hash_fft(input, seed, l)) {
      ++equal_cases;
    }
  }

  const std::uint64_t l = 16, m = 64, seeds = 100'000;
  std::vector<std::uint8_t> x(m), y(m);
  RandomSource pair_rng = rng.stream(1'000'000);
  do {
    for (auto& b : x) b = pair_rng.next_u64() & 1u;
    for (auto& b : y) b = pair_rng.next_u64() & 1u;
  } while (x == y);
  std::uint64_t collisions = 0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const ToeplitzSeed seed = draw_toeplitz_seed(l, m, pair_rng);
    if (toeplitz_hash(x, seed, l) == toeplitz_hash(y, seed, l)) ++collisions;
  }
  const double p = std::pow(2.0, -static_cast<double>(l));
  const double bound =
      p + 5.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(seeds));
  const double rate = static_cast<double>(collisions) / static_cast<double>(seeds);
  const bool pass = equal_cases == cases && rate <= bound;
  return {pass, fmt("fft==direct on %d/%d cases; collisions %llu/%llu "
                    "(rate %.2e <= %.2e)",
                    equal_cases, cases, static_cast<unsigned long long>(collisions),
                    static_cast<unsigned long long>(seeds), rate, bound)};
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    const char* name;
    Verdict (*fn)();
  };
  const Entry entries[] = {
      {"epsilon budget composition", criterion_epsilon_budget},
      {"fiber transmittance", criterion_fiber_transmittance},
      {"reconciliation frame errors at the operating point",
       criterion_fer_operating_point},
      {"frame errors monotone in rate factor", criterion_fer_monotone_in_rate},
      {"secret key rate bookkeeping", criterion_keyrate},
      {"displaced moment estimator", criterion_moment_estimator},
      {"acceptance test replay", criterion_acceptance_replay},
      {"postselection fraction vs quadrature oracle",
       criterion_postselection_oracle},
      {"noiseless reconciliation disclosure accounting",
       criterion_disclosure_accounting},
      {"dsp loopback fidelity", criterion_dsp_loopback},
      {"toeplitz equivalence and collision bound", criterion_toeplitz},
  };

  // Optional arguments select a subset of criteria by 1-based index.
  std::vector<int> selected;
  for (int a = 1; a < argc; ++a) selected.push_back(std::atoi(argv[a]));

  int failures = 0;
  int attempted = 0;
  int index = 0;
  for (const Entry& e : entries) {
    ++index;
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), index) == selected.end()) {
      continue;
    }
    ++attempted;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = e.fn();
    } catch (const std::exception& ex) {
      v = {false, std::string("exception: ") + ex.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    std::printf("[%s] %2d %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", index,
                e.name, v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failures;
  }
  std::printf("%d/%d criteria passed\n", attempted - failures, attempted);
  return failures;
}
