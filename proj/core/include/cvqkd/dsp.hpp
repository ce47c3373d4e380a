#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cvqkd {

using cdouble = std::complex<double>;

struct Waveform {
  std::vector<cdouble> samples;
  double sample_rate = 0.0;  // samples per second

  void validate() const;
};

struct RrcSpec {
  double rolloff = 0.4;        // excess bandwidth
  int span_symbols = 24;       // filter length in symbol periods; 24 truncates the
                               // tail near a null, keeping cascade ISI < 1e-3
  int samples_per_symbol = 2;

  void validate() const;
  int tap_count() const { return span_symbols * samples_per_symbol + 1; }
  int group_delay() const { return span_symbols * samples_per_symbol / 2; }
};

// Unit-energy root-raised-cosine taps, odd length, symmetric.
std::vector<double> rrc_taps(const RrcSpec& spec);

// Upsample by zero insertion and convolve with the RRC taps (full length, so a
// single unit symbol reproduces the tap sequence). Output rate is
// symbol_rate * samples_per_symbol.
Waveform rrc_shape(std::span<const cdouble> symbols, const RrcSpec& spec,
                   double symbol_rate);

// Second RRC pass; the cascade is raised-cosine and therefore free of
// inter-symbol interference at symbol instants.
Waveform matched_filter(const Waveform& w, const RrcSpec& spec);

// Symbol-instant samples after the shape + matched-filter cascade: index
// span*sps + k*sps.
std::vector<cdouble> sample_symbols(const Waveform& w, const RrcSpec& spec,
                                    std::size_t count);

// Band-limited rational rate conversion (windowed-sinc polyphase with
// per-output DC normalization). The rate ratio must be a small rational.
Waveform resample(const Waveform& w, double target_rate);

// First-order low-pass device model; cutoff_hz = 0 means flat.
struct DeviceResponse {
  double cutoff_hz = 0.0;
  double dc_gain_db = 0.0;

  void validate() const;
  cdouble gain(double frequency_hz) const;
};

// Distort a waveform with the modeled response (frequency-domain, circular).
Waveform apply_response(const Waveform& w, const DeviceResponse& resp);

// Zero-delay FIR approximating 1/resp with the magnitude clipped at
// gain_cap_db; taps must be odd and >= 3.
Waveform equalize(const Waveform& w, const DeviceResponse& resp, int taps,
                  double gain_cap_db = 20.0);

struct CdParams {
  double dispersion_ps_nm_km = 17.0;
  double length_km = 0.0;
  double wavelength_nm = 1550.0;

  void validate() const;
};

// All-pass quadratic-phase fiber dispersion: apply multiplies by
// exp(+i pi D lambda^2 L f^2 / c), compensate by the exact conjugate.
Waveform cd_apply(const Waveform& w, const CdParams& params);
Waveform cd_compensate(const Waveform& w, const CdParams& params);

struct PilotConfig {
  int period_symbols = 64;      // slot k carries a pilot iff k % period == 0
  double amplitude_ratio = 10.0;  // pilot amplitude over quantum amplitude
  double phase = 0.0;             // known pilot phase

  void validate() const;
};

// Interleave pilot symbols of amplitude base_amplitude * ratio into the
// stream; slot k % period == 0 is a pilot, other slots carry payload in order.
std::vector<cdouble> insert_pilots(std::span<const cdouble> symbols,
                                   const PilotConfig& pilots, double base_amplitude);

// Number of slots produced by insert_pilots for a payload of n symbols.
std::size_t slot_count(std::size_t payload_symbols, const PilotConfig& pilots);

// Strip pilot slots again, returning payload symbols in order.
std::vector<cdouble> strip_pilots(std::span<const cdouble> slots,
                                  const PilotConfig& pilots);

struct PhaseRecoveryResult {
  Waveform waveform;
  std::vector<double> pilot_phases;        // unwrapped estimates, radians
  std::vector<std::size_t> pilot_samples;  // sample index of each pilot instant
};

// Estimates the carrier phase at each pilot instant by matched-point
// correlation against the known pilot pulse, interpolates linearly between
// pilots, and derotates the waveform. Operates on the pre-matched-filter
// waveform produced by rrc_shape (pilot instant = group_delay + slot * sps).
PhaseRecoveryResult phase_recover(const Waveform& w, const RrcSpec& spec,
                                  const PilotConfig& pilots, std::size_t n_slots,
                                  double base_amplitude);

// sqrt(sum |rx-ref|^2 / sum |ref|^2)
double error_vector_magnitude(std::span<const cdouble> received,
                              std::span<const cdouble> reference);

// Phase-quadrant hard decision matching the key-map symbol convention.
int quadrant_symbol(cdouble value);

void write_waveform(const std::filesystem::path& path, const Waveform& w);
Waveform read_waveform(const std::filesystem::path& path);

}  // namespace cvqkd
