// Microbenchmarks for the throughput-critical kernels: the polar transform
// and list decoder, the Toeplitz extractor in both evaluation orders, pulse
// shaping / resampling, and the heterodyne sampling front end.

#include <benchmark/benchmark.h>

#include <complex>
#include <cstdint>
#include <vector>

#include "cvqkd/channel.hpp"
#include "cvqkd/dsp.hpp"
#include "cvqkd/key_map.hpp"
#include "cvqkd/phase_space.hpp"
#include "cvqkd/polar.hpp"
#include "cvqkd/privacy.hpp"
#include "cvqkd/random.hpp"

namespace {

using namespace cvqkd;

std::vector<std::uint8_t> random_bits(std::size_t n, RandomSource& rng) {
  std::vector<std::uint8_t> bits(n);
  for (auto& b : bits) b = rng.next_u64() & 1u;
  return bits;
}

void BM_PolarTransform(benchmark::State& state) {
  const std::size_t n = 1ull << static_cast<unsigned>(state.range(0));
  RandomSource rng(1);
  std::vector<std::uint8_t> bits = random_bits(n, rng);
  for (auto _ : state) {
    polar_transform_inplace(bits);
    benchmark::DoNotOptimize(bits.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n));
}
BENCHMARK(BM_PolarTransform)->Arg(10)->Arg(12)->Arg(16);

void BM_SclDecode(benchmark::State& state) {
  const int n_log2 = static_cast<int>(state.range(0));
  const auto list_size = static_cast<std::uint32_t>(state.range(1));
  const double qber = 0.35;
  const std::size_t n = 1ull << static_cast<unsigned>(n_log2);

  RandomSource rng(2);
  const PolarCode code = construct_pw(n_log2, code_dimension(n_log2, 0.8, qber, 8));
  std::vector<std::uint8_t> bob = random_bits(n, rng);
  std::vector<std::uint8_t> frozen(bob);
  polar_transform_inplace(frozen);
  const double base = std::log((1.0 - qber) / qber);
  std::vector<double> llr(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = rng.bernoulli(qber);
    llr[i] = (bob[i] ^ flip) ? -base : base;
  }
  for (auto _ : state) {
    auto cands = scl_decode(llr, code, frozen, list_size, true);
    benchmark::DoNotOptimize(cands.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n));
}
BENCHMARK(BM_SclDecode)->Args({10, 32})->Args({12, 32})->Args({12, 128});

void BM_ReconcileBlock(benchmark::State& state) {
  const int n_log2 = 12;
  const double qber = 0.10;
  const std::size_t n = 1ull << n_log2;
  RandomSource rng(3);
  const PolarCode code = construct_pw(n_log2, code_dimension(n_log2, 0.8, qber, 8));
  ReconcileConfig cfg;
  std::vector<std::uint8_t> bob = random_bits(n, rng);
  std::vector<std::uint8_t> alice(bob);
  for (auto& b : alice) b ^= static_cast<std::uint8_t>(rng.bernoulli(qber));
  for (auto _ : state) {
    auto res = reconcile_block(bob, alice, code, cfg, qber, rng);
    benchmark::DoNotOptimize(res.corrected.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ReconcileBlock);

void BM_ToeplitzDirect(benchmark::State& state) {
  const auto m = static_cast<std::uint64_t>(state.range(0));
  const std::uint64_t l = m / 8;
  RandomSource rng(4);
  std::vector<std::uint8_t> input = random_bits(m, rng);
  const ToeplitzSeed seed = draw_toeplitz_seed(l, m, rng);
  for (auto _ : state) {
    auto out = toeplitz_hash(input, seed, l);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(m));
}
BENCHMARK(BM_ToeplitzDirect)->Arg(1 << 12)->Arg(1 << 15);

void BM_ToeplitzFft(benchmark::State& state) {
  const auto m = static_cast<std::uint64_t>(state.range(0));
  const std::uint64_t l = m / 8;
  RandomSource rng(5);
  std::vector<std::uint8_t> input = random_bits(m, rng);
  const ToeplitzSeed seed = draw_toeplitz_seed(l, m, rng);
  for (auto _ : state) {
    auto out = toeplitz_hash_fft(input, seed, l);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(m));
}
BENCHMARK(BM_ToeplitzFft)->Arg(1 << 12)->Arg(1 << 15)->Arg(1 << 18);

void BM_RrcShape(benchmark::State& state) {
  const std::size_t symbols = 4096;
  RandomSource rng(6);
  std::vector<std::complex<double>> syms(symbols);
  for (auto& s : syms) {
    s = {rng.bernoulli(0.5) ? 1.0 : -1.0, rng.bernoulli(0.5) ? 1.0 : -1.0};
  }
  const RrcSpec spec;
  for (auto _ : state) {
    Waveform w = rrc_shape(syms, spec, 40e9);
    benchmark::DoNotOptimize(w.samples.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(symbols));
}
BENCHMARK(BM_RrcShape);

void BM_Resample(benchmark::State& state) {
  RandomSource rng(7);
  Waveform w;
  w.sample_rate = 80e9;
  w.samples.resize(1 << 14);
  for (auto& s : w.samples) {
    const auto [a, b] = rng.normal_pair();
    s = {a, b};
  }
  for (auto _ : state) {
    Waveform out = resample(w, 130e9);
    benchmark::DoNotOptimize(out.samples.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(w.samples.size()));
}
BENCHMARK(BM_Resample);

void BM_HeterodyneSift(benchmark::State& state) {
  const std::size_t rounds = 1 << 16;
  ChannelParams ch;
  KeyMapParams km;
  std::array<ComplexAmplitude, 4> means;
  for (int s = 0; s < 4; ++s) means[s] = received_mean(qpsk_state(s, 0.85), ch);
  RandomSource rng(8);
  std::vector<QuadratureSample> samples(rounds);
  std::vector<std::uint8_t> symbols(rounds);
  for (auto _ : state) {
    for (std::size_t i = 0; i < rounds; ++i) {
      symbols[i] = static_cast<std::uint8_t>(rng.next_u64() & 3u);
      samples[i] = measure_heterodyne(means[symbols[i]], ch, rng);
    }
    SiftResult sr = sift(samples, symbols, km);
    benchmark::DoNotOptimize(sr.kept);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(rounds));
}
BENCHMARK(BM_HeterodyneSift);

}  // namespace

BENCHMARK_MAIN();
