#include "cvqkd/privacy.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cvqkd {

namespace {

void check_bits(std::span<const std::uint8_t> bits, const char* what) {
  for (const std::uint8_t b : bits) {
    if (b > 1u) throw std::invalid_argument(std::string(what) + " must be 0/1 valued");
  }
}

std::vector<std::uint64_t> pack_bits(std::span<const std::uint8_t> bits) {
  std::vector<std::uint64_t> words((bits.size() + 63) / 64 + 1, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    words[i / 64] |= static_cast<std::uint64_t>(bits[i] & 1u) << (i % 64);
  }
  return words;
}

// Diagonal sequence s of length rows + cols - 1 with T[i][j] = s[i - j + cols - 1]:
// s[cols - 1 - j] = first_row[j], s[cols - 1 + i] = first_col[i].
std::vector<std::uint8_t> diagonal_sequence(const ToeplitzSeed& seed) {
  std::vector<std::uint8_t> s(seed.rows + seed.cols - 1);
  for (std::uint64_t j = 0; j < seed.cols; ++j) s[seed.cols - 1 - j] = seed.first_row[j];
  for (std::uint64_t i = 0; i < seed.rows; ++i) s[seed.cols - 1 + i] = seed.first_col[i];
  return s;
}

std::size_t next_pow2(std::size_t x) {
  std::size_t n = 1;
  while (n < x) n <<= 1;
  return n;
}

std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

void validate_hash_call(std::span<const std::uint8_t> input, const ToeplitzSeed& seed,
                        std::uint64_t out_bits) {
  seed.validate();
  if (out_bits != seed.rows) {
    throw std::invalid_argument("requested output width disagrees with the seed dimensions");
  }
  if (input.size() != seed.cols) {
    throw std::invalid_argument("input length disagrees with the seed dimensions");
  }
  check_bits(input, "hash input");
}

}  // namespace

void ToeplitzSeed::validate() const {
  if (rows < 1 || cols < 1) throw std::invalid_argument("matrix dimensions must be positive");
  if (rows > cols) {
    throw std::invalid_argument("output length must not exceed the input length");
  }
  if (first_row.size() != cols || first_col.size() != rows) {
    throw std::invalid_argument("seed bit counts disagree with the matrix dimensions");
  }
  check_bits(first_row, "seed");
  check_bits(first_col, "seed");
  if (first_col[0] != first_row[0]) {
    throw std::invalid_argument("first row and first column must share the corner bit");
  }
}

ToeplitzSeed draw_toeplitz_seed(std::uint64_t out_bits, std::uint64_t in_bits,
                                RandomSource& rng) {
  if (out_bits < 1 || in_bits < out_bits) {
    throw std::invalid_argument("seed dimensions must satisfy 1 <= out <= in");
  }
  ToeplitzSeed seed;
  seed.rows = out_bits;
  seed.cols = in_bits;
  seed.first_row.resize(in_bits);
  seed.first_col.resize(out_bits);
  // rows + cols - 1 fresh bits; the corner bit is shared.
  std::uint64_t word = 0;
  int avail = 0;
  const auto draw_bit = [&]() -> std::uint8_t {
    if (avail == 0) {
      word = rng.next_u64();
      avail = 64;
    }
    const auto b = static_cast<std::uint8_t>(word & 1u);
    word >>= 1;
    --avail;
    return b;
  };
  for (auto& b : seed.first_row) b = draw_bit();
  seed.first_col[0] = seed.first_row[0];
  for (std::uint64_t i = 1; i < out_bits; ++i) seed.first_col[i] = draw_bit();
  return seed;
}

std::vector<std::uint8_t> toeplitz_hash(std::span<const std::uint8_t> input,
                                        const ToeplitzSeed& seed, std::uint64_t out_bits) {
  validate_hash_call(input, seed, out_bits);
  const std::uint64_t l = seed.rows;
  const std::uint64_t m = seed.cols;
  // Row i of T is the length-m window of the reversed diagonal sequence
  // starting at bit offset l - 1 - i, so each output bit is the parity of a
  // shifted AND between two packed words.
  const auto s = diagonal_sequence(seed);
  std::vector<std::uint8_t> s_rev(s.rbegin(), s.rend());
  const auto shat = pack_bits(s_rev);
  const auto in_words = pack_bits(input);
  const std::size_t full_words = m / 64;
  const std::size_t tail_bits = m % 64;
  std::vector<std::uint8_t> out(l);
  for (std::uint64_t i = 0; i < l; ++i) {
    const std::uint64_t offset = l - 1 - i;
    const std::size_t q = offset / 64;
    const unsigned r = offset % 64;
    std::uint64_t acc = 0;
    const auto window_word = [&](std::size_t t) {
      std::uint64_t w = shat[q + t] >> r;
      if (r != 0) w |= shat[q + t + 1] << (64 - r);
      return w;
    };
    for (std::size_t t = 0; t < full_words; ++t) acc ^= window_word(t) & in_words[t];
    if (tail_bits != 0) {
      const std::uint64_t mask = (std::uint64_t(1) << tail_bits) - 1;
      acc ^= window_word(full_words) & in_words[full_words] & mask;
    }
    out[i] = static_cast<std::uint8_t>(std::popcount(acc) & 1u);
  }
  return out;
}

std::vector<std::uint8_t> toeplitz_hash_fft(std::span<const std::uint8_t> input,
                                            const ToeplitzSeed& seed,
                                            std::uint64_t out_bits) {
  validate_hash_call(input, seed, out_bits);
  const std::uint64_t l = seed.rows;
  const std::uint64_t m = seed.cols;
  const auto s = diagonal_sequence(seed);

  // Segment the input so convolution coefficients stay far below the exact
  // integer range of a double even after FFT roundoff.
  const std::uint64_t segment = std::min<std::uint64_t>(m, std::uint64_t(1) << 15);
  const std::size_t window_max = static_cast<std::size_t>(l + segment - 1);
  const std::size_t nfft = next_pow2(window_max + segment - 1);
  const std::size_t spec = nfft / 2 + 1;

  double* win_time = fftw_alloc_real(nfft);
  double* seg_time = fftw_alloc_real(nfft);
  double* conv_time = fftw_alloc_real(nfft);
  fftw_complex* win_freq = fftw_alloc_complex(spec);
  fftw_complex* seg_freq = fftw_alloc_complex(spec);
  fftw_plan win_plan;
  fftw_plan seg_plan;
  fftw_plan inv_plan;
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    win_plan = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), win_time, win_freq, FFTW_ESTIMATE);
    seg_plan = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), seg_time, seg_freq, FFTW_ESTIMATE);
    inv_plan =
        fftw_plan_dft_c2r_1d(static_cast<int>(nfft), seg_freq, conv_time, FFTW_ESTIMATE);
  }

  std::vector<std::uint32_t> parity(l, 0);
  try {
    for (std::uint64_t base = 0; base < m; base += segment) {
      const std::uint64_t count = std::min<std::uint64_t>(segment, m - base);
      // Output ranges over diagonal indices [m - base - count, l + m - 2 - base].
      const std::uint64_t d_lo = m - base - count;
      const std::size_t window = static_cast<std::size_t>(l + count - 1);
      std::fill(win_time, win_time + nfft, 0.0);
      std::fill(seg_time, seg_time + nfft, 0.0);
      for (std::size_t t = 0; t < window; ++t) win_time[t] = s[d_lo + t];
      for (std::uint64_t a = 0; a < count; ++a) seg_time[a] = input[base + a];
      fftw_execute(win_plan);
      fftw_execute(seg_plan);
      for (std::size_t k = 0; k < spec; ++k) {
        const double re =
            win_freq[k][0] * seg_freq[k][0] - win_freq[k][1] * seg_freq[k][1];
        const double im =
            win_freq[k][0] * seg_freq[k][1] + win_freq[k][1] * seg_freq[k][0];
        seg_freq[k][0] = re;
        seg_freq[k][1] = im;
      }
      fftw_execute(inv_plan);
      const double scale = 1.0 / static_cast<double>(nfft);
      for (std::uint64_t i = 0; i < l; ++i) {
        const double v = conv_time[i + count - 1] * scale;
        const double rounded = std::nearbyint(v);
        if (std::abs(v - rounded) > 0.25) {
          throw std::runtime_error("convolution lost integrality; segment too large");
        }
        parity[i] += static_cast<std::uint32_t>(rounded);
      }
    }
  } catch (...) {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    fftw_destroy_plan(win_plan);
    fftw_destroy_plan(seg_plan);
    fftw_destroy_plan(inv_plan);
    fftw_free(win_time);
    fftw_free(seg_time);
    fftw_free(conv_time);
    fftw_free(win_freq);
    fftw_free(seg_freq);
    throw;
  }
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    fftw_destroy_plan(win_plan);
    fftw_destroy_plan(seg_plan);
    fftw_destroy_plan(inv_plan);
  }
  fftw_free(win_time);
  fftw_free(seg_time);
  fftw_free(conv_time);
  fftw_free(win_freq);
  fftw_free(seg_freq);

  std::vector<std::uint8_t> out(l);
  for (std::uint64_t i = 0; i < l; ++i) out[i] = static_cast<std::uint8_t>(parity[i] & 1u);
  return out;
}

namespace {

bool on_decimal_grid(double value, double scale, std::int64_t& out) {
  const double x = value * scale;
  // A positive probability must be at least one grid step, otherwise the
  // grid is too coarse to represent it.
  if (!(x >= 0.5) || x > 9.0e15) return false;
  const double r = std::nearbyint(x);
  if (r < 1.0) return false;
  if (std::abs(x - r) > 1e-9 * r) return false;
  out = static_cast<std::int64_t>(r);
  return true;
}

}  // namespace

EpsilonBudget epsilon_budget(double eps_pa, double eps_bar, double eps_et, double eps_at,
                             double eps_ec) {
  const double values[] = {eps_pa, eps_bar, eps_et, eps_at, eps_ec};
  for (const double v : values) {
    if (!(v > 0.0) || !(v < 1.0)) {
      throw std::invalid_argument("failure probabilities must lie in (0, 1)");
    }
  }
  EpsilonBudget budget;
  budget.eps_cor = eps_ec;
  // Compose on a common decimal grid when one exists, so sums of round
  // decimal inputs land on the round decimal they denote.
  for (int k = 0; k <= 18; ++k) {
    const double scale = std::pow(10.0, k);
    std::int64_t pa = 0;
    std::int64_t bar = 0;
    std::int64_t et = 0;
    std::int64_t at = 0;
    std::int64_t ec = 0;
    if (!on_decimal_grid(eps_pa, scale, pa) || !on_decimal_grid(eps_bar, scale, bar) ||
        !on_decimal_grid(eps_et, scale, et) || !on_decimal_grid(eps_at, scale, at) ||
        !on_decimal_grid(eps_ec, scale, ec)) {
      continue;
    }
    if (pa % 2 != 0) continue;  // one more decimal makes the half exact
    const std::int64_t sec = std::max(pa / 2 + bar, et + at);
    budget.eps_sec = static_cast<double>(sec) / scale;
    budget.eps_total = static_cast<double>(sec + ec) / scale;
    return budget;
  }
  budget.eps_sec = std::max(0.5 * eps_pa + eps_bar, eps_et + eps_at);
  budget.eps_total = budget.eps_sec + budget.eps_cor;
  return budget;
}

void KeyLengthParams::validate() const {
  if (n < 1) throw std::invalid_argument("round count must be at least 1");
  if (!(delta_bar >= 0.0) || !(delta_w >= 0.0)) {
    throw std::invalid_argument("entropy penalties must be non-negative");
  }
  if (!(leak_ec >= 0.0)) throw std::invalid_argument("leakage must be non-negative");
  if (!std::isfinite(entropy_rate)) {
    throw std::invalid_argument("entropy rate must be finite");
  }
  for (const double eps : {eps_pa, eps_ec, eps_et, eps_at, eps_bar}) {
    if (!(eps > 0.0) || !(eps < 1.0)) {
      throw std::invalid_argument("failure probabilities must lie in (0, 1)");
    }
  }
}

std::uint64_t key_length(const KeyLengthParams& params) {
  params.validate();
  const double net_rate = params.entropy_rate - params.delta_bar - params.delta_w;
  const double raw = static_cast<double>(params.n) * net_rate - params.leak_ec -
                     2.0 * std::log2(1.0 / params.eps_pa);
  if (!(raw > 0.0)) return 0;
  return static_cast<std::uint64_t>(std::floor(raw));
}

double aggregate_skr(double rate_pol1, double rate_pol2, double symbol_rate) {
  if (!(rate_pol1 >= 0.0) || !(rate_pol2 >= 0.0) || !(symbol_rate >= 0.0)) {
    throw std::invalid_argument("rates must be non-negative");
  }
  return (rate_pol1 + rate_pol2) * symbol_rate;
}

EntropySidecar read_entropy_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open entropy bound file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed entropy bound file " + path.string() + ": " +
                             e.what());
  }
  if (!doc.is_object()) throw std::runtime_error("entropy bound file must hold an object");
  EntropySidecar sidecar;
  for (const auto& [key, value] : doc.items()) {
    if (key == "entropy_rate") {
      sidecar.entropy_rate = value.get<double>();
    } else if (key == "delta_bar") {
      sidecar.delta_bar = value.get<double>();
    } else if (key == "delta_w") {
      sidecar.delta_w = value.get<double>();
    } else if (key == "note") {
      sidecar.note = value.get<std::string>();
    } else {
      throw std::runtime_error("unknown field in entropy bound file: " + key);
    }
  }
  if (!doc.contains("entropy_rate") || !doc.contains("delta_bar") ||
      !doc.contains("delta_w")) {
    throw std::runtime_error(
        "entropy bound file needs entropy_rate, delta_bar and delta_w");
  }
  if (!(sidecar.delta_bar >= 0.0) || !(sidecar.delta_w >= 0.0)) {
    throw std::runtime_error("entropy penalties must be non-negative");
  }
  return sidecar;
}

void write_entropy_sidecar(const std::filesystem::path& path,
                           const EntropySidecar& sidecar) {
  nlohmann::json doc;
  doc["entropy_rate"] = sidecar.entropy_rate;
  doc["delta_bar"] = sidecar.delta_bar;
  doc["delta_w"] = sidecar.delta_w;
  if (!sidecar.note.empty()) doc["note"] = sidecar.note;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write entropy bound file: " + path.string());
  out << doc.dump(2) << "\n";
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (const std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t toeplitz_seed_digest(const ToeplitzSeed& seed) {
  seed.validate();
  const auto s = diagonal_sequence(seed);
  std::vector<std::uint8_t> packed((s.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    packed[i / 8] |= static_cast<std::uint8_t>((s[i] & 1u) << (i % 8));
  }
  return fnv1a64(packed);
}

namespace {

constexpr char kKeyMagic[4] = {'C', 'V', 'Q', 'K'};
constexpr std::uint32_t kKeyVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
}

}  // namespace

void write_key_file(const std::filesystem::path& path, const KeyFile& key) {
  if (key.bits.size() != key.length_bits) {
    throw std::invalid_argument("key bit count disagrees with the declared length");
  }
  check_bits(key.bits, "key");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write key file: " + path.string());
  out.write(kKeyMagic, sizeof(kKeyMagic));
  write_pod(out, kKeyVersion);
  write_pod(out, key.length_bits);
  write_pod(out, key.seed_digest);
  write_pod(out, key.budget.eps_cor);
  write_pod(out, key.budget.eps_sec);
  write_pod(out, key.budget.eps_total);
  std::vector<std::uint8_t> packed((key.length_bits + 7) / 8, 0);
  for (std::uint64_t i = 0; i < key.length_bits; ++i) {
    packed[i / 8] |= static_cast<std::uint8_t>((key.bits[i] & 1u) << (i % 8));
  }
  out.write(reinterpret_cast<const char*>(packed.data()),
            static_cast<std::streamsize>(packed.size()));
  if (!out) throw std::runtime_error("short write to key file: " + path.string());
}

KeyFile read_key_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open key file: " + path.string());
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kKeyMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a key file: " + path.string());
  }
  std::uint32_t version = 0;
  read_pod(in, version);
  if (version != kKeyVersion) {
    throw std::runtime_error("unsupported key file version in " + path.string());
  }
  KeyFile key;
  read_pod(in, key.length_bits);
  read_pod(in, key.seed_digest);
  read_pod(in, key.budget.eps_cor);
  read_pod(in, key.budget.eps_sec);
  read_pod(in, key.budget.eps_total);
  std::vector<std::uint8_t> packed((key.length_bits + 7) / 8);
  in.read(reinterpret_cast<char*>(packed.data()),
          static_cast<std::streamsize>(packed.size()));
  if (!in) throw std::runtime_error("truncated key file: " + path.string());
  key.bits.resize(key.length_bits);
  for (std::uint64_t i = 0; i < key.length_bits; ++i) {
    key.bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  }
  return key;
}

}  // namespace cvqkd
