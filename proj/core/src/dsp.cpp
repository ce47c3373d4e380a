#include "cvqkd/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace cvqkd {

namespace {

constexpr double kSpeedOfLight = 299792458.0;  // m/s

std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

void fft_in_place(std::vector<cdouble>& data, int sign) {
  const auto n = static_cast<int>(data.size());
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    plan = fftw_plan_dft_1d(n, ptr, ptr, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    fftw_destroy_plan(plan);
  }
  if (sign == FFTW_BACKWARD) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : data) v *= scale;
  }
}

double fft_bin_frequency(std::size_t k, std::size_t n, double sample_rate) {
  const auto half = (n + 1) / 2;
  const double idx = k < half ? static_cast<double>(k)
                              : static_cast<double>(k) - static_cast<double>(n);
  return idx * sample_rate / static_cast<double>(n);
}

// Multiply the spectrum by factor(f); factor must be finite on the grid.
template <typename F>
Waveform spectral_filter(const Waveform& w, F&& factor) {
  w.validate();
  Waveform out = w;
  fft_in_place(out.samples, FFTW_FORWARD);
  const std::size_t n = out.samples.size();
  for (std::size_t k = 0; k < n; ++k) {
    out.samples[k] *= factor(fft_bin_frequency(k, n, w.sample_rate));
  }
  fft_in_place(out.samples, FFTW_BACKWARD);
  return out;
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser_window(double u, double beta) {
  const double t = 1.0 - u * u;
  if (t <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(t)) / std::cyl_bessel_i(0.0, beta);
}

// Best rational approximation by continued fractions.
bool rationalize(double ratio, std::uint64_t max_den, std::uint64_t& num,
                 std::uint64_t& den) {
  double x = ratio;
  std::uint64_t p_prev = 1;
  std::uint64_t q_prev = 0;
  std::uint64_t p = static_cast<std::uint64_t>(std::floor(x));
  std::uint64_t q = 1;
  x -= std::floor(x);
  for (int iter = 0; iter < 64; ++iter) {
    const double approx = static_cast<double>(p) / static_cast<double>(q);
    if (std::abs(approx - ratio) <= 1e-9 * ratio) {
      num = p;
      den = q;
      return num >= 1;
    }
    if (x == 0.0) break;
    x = 1.0 / x;
    const double a_f = std::floor(x);
    if (a_f > 1e18) break;
    const auto a = static_cast<std::uint64_t>(a_f);
    x -= a_f;
    const std::uint64_t p_next = a * p + p_prev;
    const std::uint64_t q_next = a * q + q_prev;
    if (q_next > max_den) break;
    p_prev = p;
    q_prev = q;
    p = p_next;
    q = q_next;
  }
  const double approx = static_cast<double>(p) / static_cast<double>(q);
  if (std::abs(approx - ratio) <= 1e-9 * ratio && p >= 1) {
    num = p;
    den = q;
    return true;
  }
  return false;
}

double cd_phase_coefficient(const CdParams& params) {
  params.validate();
  const double d_si = params.dispersion_ps_nm_km * 1e-6;  // s/m^2
  const double lambda_m = params.wavelength_nm * 1e-9;
  const double length_m = params.length_km * 1e3;
  return std::numbers::pi * d_si * lambda_m * lambda_m * length_m / kSpeedOfLight;
}

Waveform cd_filter(const Waveform& w, const CdParams& params, double sign) {
  const double coeff = cd_phase_coefficient(params);
  return spectral_filter(w, [&](double f) {
    return std::polar(1.0, sign * coeff * f * f);
  });
}

}  // namespace

void Waveform::validate() const {
  if (samples.empty()) throw std::invalid_argument("waveform must be nonempty");
  if (!(sample_rate > 0.0)) throw std::invalid_argument("sample rate must be positive");
}

void RrcSpec::validate() const {
  if (!(rolloff > 0.0) || rolloff > 1.0) {
    throw std::invalid_argument("roll-off must lie in (0, 1]");
  }
  if (span_symbols < 8) throw std::invalid_argument("filter span must be at least 8 symbols");
  if (samples_per_symbol < 2) {
    throw std::invalid_argument("need at least 2 samples per symbol");
  }
  if ((span_symbols * samples_per_symbol) % 2 != 0) {
    throw std::invalid_argument("span times oversampling must be even");
  }
}

std::vector<double> rrc_taps(const RrcSpec& spec) {
  spec.validate();
  const int count = spec.tap_count();
  const int center = spec.group_delay();
  const double beta = spec.rolloff;
  std::vector<double> taps(count);
  for (int i = 0; i < count; ++i) {
    const double t = static_cast<double>(i - center) / spec.samples_per_symbol;
    double value = 0.0;
    const double quarter = 1.0 / (4.0 * beta);
    if (std::abs(t) < 1e-12) {
      value = 1.0 + beta * (4.0 / std::numbers::pi - 1.0);
    } else if (std::abs(std::abs(t) - quarter) < 1e-9) {
      const double arg = std::numbers::pi / (4.0 * beta);
      value = (beta / std::numbers::sqrt2) *
              ((1.0 + 2.0 / std::numbers::pi) * std::sin(arg) +
               (1.0 - 2.0 / std::numbers::pi) * std::cos(arg));
    } else {
      const double denom = std::numbers::pi * t * (1.0 - 16.0 * beta * beta * t * t);
      value = (std::sin(std::numbers::pi * t * (1.0 - beta)) +
               4.0 * beta * t * std::cos(std::numbers::pi * t * (1.0 + beta))) /
              denom;
    }
    taps[i] = value;
  }
  double energy = 0.0;
  for (const double h : taps) energy += h * h;
  const double scale = 1.0 / std::sqrt(energy);
  for (double& h : taps) h *= scale;
  return taps;
}

namespace {

// Full convolution of complex data with real taps.
std::vector<cdouble> convolve_full(std::span<const cdouble> data,
                                   std::span<const double> taps) {
  std::vector<cdouble> out(data.size() + taps.size() - 1, cdouble{0.0, 0.0});
  for (std::size_t i = 0; i < data.size(); ++i) {
    const cdouble v = data[i];
    if (v == cdouble{0.0, 0.0}) continue;
    for (std::size_t j = 0; j < taps.size(); ++j) out[i + j] += v * taps[j];
  }
  return out;
}

}  // namespace

Waveform rrc_shape(std::span<const cdouble> symbols, const RrcSpec& spec,
                   double symbol_rate) {
  spec.validate();
  if (symbols.empty()) throw std::invalid_argument("symbol stream must be nonempty");
  if (!(symbol_rate > 0.0)) throw std::invalid_argument("symbol rate must be positive");
  std::vector<cdouble> upsampled(symbols.size() * spec.samples_per_symbol,
                                 cdouble{0.0, 0.0});
  for (std::size_t k = 0; k < symbols.size(); ++k) {
    upsampled[k * spec.samples_per_symbol] = symbols[k];
  }
  const auto taps = rrc_taps(spec);
  Waveform out;
  out.samples = convolve_full(upsampled, taps);
  out.sample_rate = symbol_rate * spec.samples_per_symbol;
  return out;
}

Waveform matched_filter(const Waveform& w, const RrcSpec& spec) {
  w.validate();
  const auto taps = rrc_taps(spec);
  Waveform out;
  out.samples = convolve_full(w.samples, taps);
  out.sample_rate = w.sample_rate;
  return out;
}

std::vector<cdouble> sample_symbols(const Waveform& w, const RrcSpec& spec,
                                    std::size_t count) {
  w.validate();
  spec.validate();
  const std::size_t offset = 2 * static_cast<std::size_t>(spec.group_delay());
  std::vector<cdouble> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t idx = offset + k * spec.samples_per_symbol;
    if (idx >= w.samples.size()) {
      throw std::invalid_argument("waveform too short for the requested symbol count");
    }
    out[k] = w.samples[idx];
  }
  return out;
}

Waveform resample(const Waveform& w, double target_rate) {
  w.validate();
  if (!(target_rate > 0.0)) throw std::invalid_argument("target rate must be positive");
  if (target_rate == w.sample_rate) return w;
  const double ratio = target_rate / w.sample_rate;
  std::uint64_t num = 0;
  std::uint64_t den = 0;
  if (!rationalize(ratio, 4096, num, den)) {
    throw std::invalid_argument("rate ratio is not a small rational number");
  }
  const double scale = std::min(1.0, ratio);  // anti-alias bandwidth
  const double kaiser_beta = 10.0;
  const int half_width = 32;  // zero crossings of the prototype
  const double support = half_width / scale;
  const std::size_t n_in = w.samples.size();
  const auto n_out = static_cast<std::size_t>(
      (static_cast<unsigned __int128>(n_in - 1) * num) / den + 1);
  Waveform out;
  out.sample_rate = w.sample_rate * (static_cast<double>(num) / static_cast<double>(den));
  out.samples.resize(n_out);
  for (std::size_t j = 0; j < n_out; ++j) {
    const std::uint64_t whole = (j * den) / num;
    const double frac =
        static_cast<double>(j * den - whole * num) / static_cast<double>(num);
    const double t = static_cast<double>(whole) + frac;
    const auto lo = static_cast<std::int64_t>(std::ceil(t - support));
    const auto hi = static_cast<std::int64_t>(std::floor(t + support));
    cdouble acc{0.0, 0.0};
    double norm = 0.0;
    for (std::int64_t m = lo; m <= hi; ++m) {
      const double tau = t - static_cast<double>(m);
      const double g = scale * sinc(scale * tau) * kaiser_window(tau / support, kaiser_beta);
      norm += g;
      if (m >= 0 && m < static_cast<std::int64_t>(n_in)) {
        acc += g * w.samples[static_cast<std::size_t>(m)];
      }
    }
    out.samples[j] = acc / norm;
  }
  return out;
}

void DeviceResponse::validate() const {
  if (!(cutoff_hz >= 0.0)) throw std::invalid_argument("cutoff must be non-negative");
  if (!std::isfinite(dc_gain_db)) throw std::invalid_argument("gain must be finite");
}

cdouble DeviceResponse::gain(double frequency_hz) const {
  const double g = std::pow(10.0, dc_gain_db / 20.0);
  if (cutoff_hz == 0.0) return {g, 0.0};
  return g / cdouble{1.0, frequency_hz / cutoff_hz};
}

Waveform apply_response(const Waveform& w, const DeviceResponse& resp) {
  resp.validate();
  return spectral_filter(w, [&](double f) { return resp.gain(f); });
}

Waveform equalize(const Waveform& w, const DeviceResponse& resp, int taps,
                  double gain_cap_db) {
  w.validate();
  resp.validate();
  if (taps < 3 || taps % 2 == 0) {
    throw std::invalid_argument("equalizer needs an odd tap count of at least 3");
  }
  if (!std::isfinite(gain_cap_db)) {
    throw std::invalid_argument("inverting a response requires a finite gain cap");
  }
  const double cap = std::pow(10.0, gain_cap_db / 20.0);
  const auto n = static_cast<std::size_t>(taps);
  std::vector<cdouble> target(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = fft_bin_frequency(k, n, w.sample_rate);
    const cdouble g = resp.gain(f);
    cdouble inv = std::abs(g) > 0.0 ? 1.0 / g : cdouble{cap, 0.0};
    if (std::abs(inv) > cap) inv *= cap / std::abs(inv);
    target[k] = inv;
  }
  fft_in_place(target, FFTW_BACKWARD);
  // Rotate the impulse response to the center tap and window it.
  const std::size_t center = n / 2;
  std::vector<cdouble> fir(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = (i + n - center) % n;
    const double window =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                              static_cast<double>(n - 1)));
    fir[i] = target[src] * window;
  }
  // Zero-delay "same" convolution about the center tap.
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.size(), cdouble{0.0, 0.0});
  const auto size = static_cast<std::int64_t>(w.samples.size());
  for (std::int64_t i = 0; i < size; ++i) {
    cdouble acc{0.0, 0.0};
    for (std::int64_t j = 0; j < static_cast<std::int64_t>(n); ++j) {
      const std::int64_t src = i + j - static_cast<std::int64_t>(center);
      if (src < 0 || src >= size) continue;
      acc += w.samples[static_cast<std::size_t>(src)] *
             fir[static_cast<std::size_t>(n) - 1 - static_cast<std::size_t>(j)];
    }
    out.samples[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

void CdParams::validate() const {
  if (!std::isfinite(dispersion_ps_nm_km) || !std::isfinite(wavelength_nm)) {
    throw std::invalid_argument("dispersion parameters must be finite");
  }
  if (!(length_km >= 0.0)) throw std::invalid_argument("fiber length must be non-negative");
  if (!(wavelength_nm > 0.0)) throw std::invalid_argument("wavelength must be positive");
}

Waveform cd_apply(const Waveform& w, const CdParams& params) {
  return cd_filter(w, params, +1.0);
}

Waveform cd_compensate(const Waveform& w, const CdParams& params) {
  return cd_filter(w, params, -1.0);
}

void PilotConfig::validate() const {
  if (period_symbols < 2) throw std::invalid_argument("pilot period must be at least 2");
  if (!(amplitude_ratio > 1.0)) {
    throw std::invalid_argument("pilot amplitude ratio must exceed 1");
  }
  if (!std::isfinite(phase)) throw std::invalid_argument("pilot phase must be finite");
}

std::size_t slot_count(std::size_t payload_symbols, const PilotConfig& pilots) {
  pilots.validate();
  const auto per_group = static_cast<std::size_t>(pilots.period_symbols) - 1;
  const std::size_t groups = (payload_symbols + per_group - 1) / per_group;
  return payload_symbols + std::max<std::size_t>(groups, 1);
}

std::vector<cdouble> insert_pilots(std::span<const cdouble> symbols,
                                   const PilotConfig& pilots, double base_amplitude) {
  pilots.validate();
  if (symbols.empty()) throw std::invalid_argument("symbol stream must be nonempty");
  if (!(base_amplitude > 0.0)) throw std::invalid_argument("amplitude must be positive");
  const cdouble pilot =
      std::polar(base_amplitude * pilots.amplitude_ratio, pilots.phase);
  std::vector<cdouble> slots;
  slots.reserve(slot_count(symbols.size(), pilots));
  std::size_t consumed = 0;
  for (std::size_t k = 0; consumed < symbols.size(); ++k) {
    if (k % static_cast<std::size_t>(pilots.period_symbols) == 0) {
      slots.push_back(pilot);
    } else {
      slots.push_back(symbols[consumed++]);
    }
  }
  return slots;
}

std::vector<cdouble> strip_pilots(std::span<const cdouble> slots,
                                  const PilotConfig& pilots) {
  pilots.validate();
  std::vector<cdouble> out;
  out.reserve(slots.size());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (k % static_cast<std::size_t>(pilots.period_symbols) != 0) out.push_back(slots[k]);
  }
  return out;
}

PhaseRecoveryResult phase_recover(const Waveform& w, const RrcSpec& spec,
                                  const PilotConfig& pilots, std::size_t n_slots,
                                  double base_amplitude) {
  w.validate();
  spec.validate();
  pilots.validate();
  if (!(base_amplitude > 0.0)) throw std::invalid_argument("amplitude must be positive");
  const auto taps = rrc_taps(spec);
  const std::size_t delay = spec.group_delay();
  const std::size_t sps = spec.samples_per_symbol;
  const cdouble expected =
      std::polar(base_amplitude * pilots.amplitude_ratio, pilots.phase);

  PhaseRecoveryResult result;
  for (std::size_t slot = 0; slot < n_slots;
       slot += static_cast<std::size_t>(pilots.period_symbols)) {
    const std::size_t instant = delay + slot * sps;
    if (instant + delay >= w.samples.size()) break;
    // Matched-point correlation: the raised-cosine cascade nulls the
    // contribution of every other symbol-aligned pulse at this instant.
    cdouble mf{0.0, 0.0};
    for (std::size_t m = 0; m < taps.size(); ++m) {
      mf += taps[m] * w.samples[instant - delay + m];
    }
    const double raw = std::arg(mf * std::conj(expected));
    double unwrapped = raw;
    if (!result.pilot_phases.empty()) {
      const double prev = result.pilot_phases.back();
      unwrapped = prev + std::remainder(raw - prev, 2.0 * std::numbers::pi);
    }
    result.pilot_phases.push_back(unwrapped);
    result.pilot_samples.push_back(instant);
  }
  if (result.pilot_phases.size() < 2) {
    throw std::invalid_argument("phase recovery needs at least 2 pilots");
  }

  result.waveform.sample_rate = w.sample_rate;
  result.waveform.samples.resize(w.samples.size());
  const auto& px = result.pilot_samples;
  const auto& py = result.pilot_phases;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    double phi;
    if (i <= px.front()) {
      phi = py.front();
    } else if (i >= px.back()) {
      phi = py.back();
    } else {
      while (px[seg + 1] < i) ++seg;
      const double t = static_cast<double>(i - px[seg]) /
                       static_cast<double>(px[seg + 1] - px[seg]);
      phi = py[seg] + t * (py[seg + 1] - py[seg]);
    }
    result.waveform.samples[i] = w.samples[i] * std::polar(1.0, -phi);
  }
  return result;
}

double error_vector_magnitude(std::span<const cdouble> received,
                              std::span<const cdouble> reference) {
  if (received.size() != reference.size() || reference.empty()) {
    throw std::invalid_argument("vectors must be nonempty and equally long");
  }
  double err = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < received.size(); ++i) {
    err += std::norm(received[i] - reference[i]);
    ref += std::norm(reference[i]);
  }
  if (ref == 0.0) throw std::invalid_argument("reference power must be nonzero");
  return std::sqrt(err / ref);
}

int quadrant_symbol(cdouble value) {
  double theta = std::atan2(value.imag(), value.real());
  if (theta < 0.0) theta += 2.0 * std::numbers::pi;
  const int symbol = static_cast<int>(std::floor(2.0 * theta / std::numbers::pi));
  return std::min(symbol, 3);
}

namespace {

constexpr char kWaveMagic[4] = {'C', 'V', 'W', 'F'};
constexpr std::uint32_t kWaveVersion = 1;

}  // namespace

void write_waveform(const std::filesystem::path& path, const Waveform& w) {
  w.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write waveform file: " + path.string());
  out.write(kWaveMagic, sizeof(kWaveMagic));
  out.write(reinterpret_cast<const char*>(&kWaveVersion), sizeof(kWaveVersion));
  out.write(reinterpret_cast<const char*>(&w.sample_rate), sizeof(double));
  const std::uint64_t count = w.samples.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const cdouble& v : w.samples) {
    const double re = v.real();
    const double im = v.imag();
    out.write(reinterpret_cast<const char*>(&re), sizeof(double));
    out.write(reinterpret_cast<const char*>(&im), sizeof(double));
  }
  if (!out) throw std::runtime_error("short write to waveform file: " + path.string());
}

Waveform read_waveform(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open waveform file: " + path.string());
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kWaveMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a waveform file: " + path.string());
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kWaveVersion) {
    throw std::runtime_error("unsupported waveform version in " + path.string());
  }
  Waveform w;
  in.read(reinterpret_cast<char*>(&w.sample_rate), sizeof(double));
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in) throw std::runtime_error("truncated waveform file: " + path.string());
  w.samples.resize(count);
  for (auto& v : w.samples) {
    double re = 0.0;
    double im = 0.0;
    in.read(reinterpret_cast<char*>(&re), sizeof(double));
    in.read(reinterpret_cast<char*>(&im), sizeof(double));
    v = {re, im};
  }
  if (!in) throw std::runtime_error("truncated waveform file: " + path.string());
  w.validate();
  return w;
}

}  // namespace cvqkd
