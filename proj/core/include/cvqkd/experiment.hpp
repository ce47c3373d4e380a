#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvqkd/channel.hpp"
#include "cvqkd/dsp.hpp"
#include "cvqkd/key_map.hpp"
#include "cvqkd/polar.hpp"
#include "cvqkd/protocol_tests.hpp"

namespace cvqkd {

// Resolved experiment configuration. Defaults reproduce the reference
// operating point; the JSON loader rejects unknown keys so typos in security
// parameters cannot pass silently.
struct ChannelConfig {
  double eta_ch = 0.63387;
  double eta_d = 0.33;
  double nu_el = 0.043;
  double excess_noise = 0.0;

  ChannelParams params() const;
};

struct ProtocolConfig {
  double amplitude = 0.85;
  std::uint64_t rounds = 1'000'000;
  double testing_ratio = 0.3;
  double beta_et = 5.0;
  double outlier_fraction = 1e-8;
  double delta_r = 0.1;
  double detection_limit = 7.0;
  double t_factor = 1.5;
  bool two_sided_acceptance = false;
  double eps_et = 1e-11;
  double eps_at = 7e-11;
  double eps_bar = 7e-11;
  double eps_ec = 2e-11;
  double eps_pa = 2e-11;
};

struct ReconciliationConfig {
  int n_log2 = 12;
  double beta_qkd = 0.80;
  int crc_len = 8;
  std::uint32_t list_size = 32;
  std::uint32_t n_hash = 32;
  std::string construction = "mc";  // "pw" or "mc"
  std::uint64_t mc_trials = 100'000;
  bool exact_llr = true;

  ReconcileConfig reconcile() const;
};

struct DspConfig {
  double symbol_rate = 20e9;
  double rolloff = 0.4;
  int span_symbols = 24;
  int samples_per_symbol = 2;
  std::uint64_t symbols = 10'000;
  int pilot_period = 64;
  double pilot_ratio = 10.0;
  double pilot_phase = 0.0;
  double cd_dispersion = 17.0;
  double cd_length_km = 10.0;
  double cd_wavelength_nm = 1550.0;
  bool cd_compensation = true;
  double device_cutoff_hz = 0.0;  // 0 = flat transmitter/receiver model
  double device_gain_db = 0.0;
  int equalizer_taps = 129;
  double gain_cap_db = 20.0;
  double noise_sigma = 0.0;  // per-quadrature AWGN at the receiver input

  RrcSpec rrc() const;
  PilotConfig pilots() const;
  CdParams cd() const;
  DeviceResponse device() const;
};

struct KeyrateConfig {
  std::uint64_t rounds_total = 10'000'000'000ull;
  double testing_ratio = 0.3;
  double qber = 0.0;                  // operating-point crossover
  double postselect_fraction = 1.0;   // kept fraction of key rounds
  int n_log2 = 16;
  double beta_qkd = 0.80;
  int crc_len = 8;
  std::uint32_t n_hash = 32;
  double fer = 0.0;
  double symbol_rate_baud = 40e9;
  std::string sidecar;         // entropy bound file (required by run_keyrate)
  std::string sidecar_second;  // optional second polarization
};

struct IrBenchPoint {
  double qber = 0.35;
  int n_log2 = 15;
  double beta_qkd = 0.80;
  int crc_len = 8;
  std::uint32_t list_size = 32;
};

struct IrBenchConfig {
  std::vector<IrBenchPoint> grid;
  std::uint64_t trials = 200;
  std::string construction = "mc";
  std::uint64_t mc_trials = 100'000;
  std::uint32_t n_hash = 32;
  bool exact_llr = true;
};

struct AcceptanceExpectations {
  std::array<double, 4> mean_n{};
  std::array<double, 4> mean_n2{};
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  ChannelConfig channel;
  ProtocolConfig protocol;
  ReconciliationConfig reconciliation;
  DspConfig dsp;
  KeyrateConfig keyrate;
  IrBenchConfig ir_bench;
  // Optional pre-agreed acceptance expectations; absent means the run
  // characterizes honestly with an independent random stream first.
  std::optional<AcceptanceExpectations> acceptance_expectations;

  void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct RunOptions {
  std::optional<std::uint64_t> seed_override;
  std::optional<std::uint64_t> trials_override;
  std::optional<std::filesystem::path> out_dir;
};

struct RunOutcome {
  bool aborted = false;
  std::string abort_stage;  // nonempty iff aborted
  nlohmann::json report;
};

RunOutcome run_protocol(const ExperimentConfig& cfg, const RunOptions& opts);
RunOutcome run_ir_bench(const ExperimentConfig& cfg, const RunOptions& opts);
RunOutcome run_dsp_loopback(const ExperimentConfig& cfg, const RunOptions& opts);
RunOutcome run_keyrate(const ExperimentConfig& cfg, const RunOptions& opts);
RunOutcome run_characterize(const ExperimentConfig& cfg, const RunOptions& opts);

// Table-shaped CSV emission for the reconciliation benchmark.
std::string ir_bench_csv(const nlohmann::json& rows);

}  // namespace cvqkd
