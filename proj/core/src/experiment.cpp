#include "cvqkd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cvqkd/phase_space.hpp"
#include "cvqkd/privacy.hpp"
#include "cvqkd/random.hpp"

namespace cvqkd {
namespace {

using nlohmann::json;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

// Strict object walker: every present key must be consumed, so typos in
// security-relevant settings are build errors, not silent defaults.
class StrictObject {
 public:
  StrictObject(const json& j, std::string context)
      : obj_(j), context_(std::move(context)) {
    if (!obj_.is_object()) {
      throw std::runtime_error("config: " + context_ + " must be an object");
    }
  }

  const json* take(const std::string& key) {
    seen_.push_back(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (const json* v = take(key)) {
      try {
        out = v->get<T>();
      } catch (const json::exception&) {
        throw std::runtime_error("config: bad value type for " + context_ +
                                 "." + key);
      }
    }
  }

  void finish() {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw std::runtime_error("config: unknown key " + context_ + "." +
                                 it.key());
      }
    }
  }

 private:
  const json& obj_;
  std::string context_;
  std::vector<std::string> seen_;
};

void parse_channel(const json& j, ChannelConfig& c) {
  StrictObject o(j, "channel");
  o.get("eta_ch", c.eta_ch);
  o.get("eta_d", c.eta_d);
  o.get("nu_el", c.nu_el);
  o.get("excess_noise", c.excess_noise);
  o.finish();
}

void parse_protocol(const json& j, ProtocolConfig& p) {
  StrictObject o(j, "protocol");
  o.get("amplitude", p.amplitude);
  o.get("rounds", p.rounds);
  o.get("testing_ratio", p.testing_ratio);
  o.get("beta_et", p.beta_et);
  o.get("outlier_fraction", p.outlier_fraction);
  o.get("delta_r", p.delta_r);
  o.get("detection_limit", p.detection_limit);
  o.get("t_factor", p.t_factor);
  o.get("two_sided_acceptance", p.two_sided_acceptance);
  o.get("eps_et", p.eps_et);
  o.get("eps_at", p.eps_at);
  o.get("eps_bar", p.eps_bar);
  o.get("eps_ec", p.eps_ec);
  o.get("eps_pa", p.eps_pa);
  o.finish();
}

void parse_reconciliation(const json& j, ReconciliationConfig& r) {
  StrictObject o(j, "reconciliation");
  o.get("n_log2", r.n_log2);
  o.get("beta_qkd", r.beta_qkd);
  o.get("crc_len", r.crc_len);
  o.get("list_size", r.list_size);
  o.get("n_hash", r.n_hash);
  o.get("construction", r.construction);
  o.get("mc_trials", r.mc_trials);
  o.get("exact_llr", r.exact_llr);
  o.finish();
}

void parse_dsp(const json& j, DspConfig& d) {
  StrictObject o(j, "dsp");
  o.get("symbol_rate", d.symbol_rate);
  o.get("rolloff", d.rolloff);
  o.get("span_symbols", d.span_symbols);
  o.get("samples_per_symbol", d.samples_per_symbol);
  o.get("symbols", d.symbols);
  o.get("pilot_period", d.pilot_period);
  o.get("pilot_ratio", d.pilot_ratio);
  o.get("pilot_phase", d.pilot_phase);
  o.get("cd_dispersion", d.cd_dispersion);
  o.get("cd_length_km", d.cd_length_km);
  o.get("cd_wavelength_nm", d.cd_wavelength_nm);
  o.get("cd_compensation", d.cd_compensation);
  o.get("device_cutoff_hz", d.device_cutoff_hz);
  o.get("device_gain_db", d.device_gain_db);
  o.get("equalizer_taps", d.equalizer_taps);
  o.get("gain_cap_db", d.gain_cap_db);
  o.get("noise_sigma", d.noise_sigma);
  o.finish();
}

void parse_keyrate(const json& j, KeyrateConfig& k) {
  StrictObject o(j, "keyrate");
  o.get("rounds_total", k.rounds_total);
  o.get("testing_ratio", k.testing_ratio);
  o.get("qber", k.qber);
  o.get("postselect_fraction", k.postselect_fraction);
  o.get("n_log2", k.n_log2);
  o.get("beta_qkd", k.beta_qkd);
  o.get("crc_len", k.crc_len);
  o.get("n_hash", k.n_hash);
  o.get("fer", k.fer);
  o.get("symbol_rate_baud", k.symbol_rate_baud);
  o.get("sidecar", k.sidecar);
  o.get("sidecar_second", k.sidecar_second);
  o.finish();
}

void parse_ir_bench(const json& j, IrBenchConfig& b) {
  StrictObject o(j, "ir_bench");
  o.get("trials", b.trials);
  o.get("construction", b.construction);
  o.get("mc_trials", b.mc_trials);
  o.get("n_hash", b.n_hash);
  o.get("exact_llr", b.exact_llr);
  if (const json* grid = o.take("grid")) {
    if (!grid->is_array()) {
      throw std::runtime_error("config: ir_bench.grid must be an array");
    }
    b.grid.clear();
    int idx = 0;
    for (const json& cell : *grid) {
      IrBenchPoint pt;
      StrictObject po(cell, "ir_bench.grid[" + std::to_string(idx) + "]");
      po.get("qber", pt.qber);
      po.get("n_log2", pt.n_log2);
      po.get("beta_qkd", pt.beta_qkd);
      po.get("crc_len", pt.crc_len);
      po.get("list_size", pt.list_size);
      po.finish();
      b.grid.push_back(pt);
      ++idx;
    }
  }
  o.finish();
}

void parse_expectations(const json& j, AcceptanceExpectations& e) {
  StrictObject o(j, "acceptance_expectations");
  const json* mn = o.take("mean_n");
  const json* mn2 = o.take("mean_n2");
  o.finish();
  if (mn == nullptr || mn2 == nullptr) {
    throw std::runtime_error(
        "config: acceptance_expectations needs mean_n and mean_n2");
  }
  if (!mn->is_array() || mn->size() != 4 || !mn2->is_array() ||
      mn2->size() != 4) {
    throw std::runtime_error(
        "config: acceptance_expectations entries must be arrays of 4 values");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    e.mean_n[i] = (*mn)[i].get<double>();
    e.mean_n2[i] = (*mn2)[i].get<double>();
  }
}

json expectations_to_json(const AcceptanceExpectations& e) {
  return json{{"mean_n", e.mean_n}, {"mean_n2", e.mean_n2}};
}

// ---------------------------------------------------------------------------
// Shared simulation helpers

struct SimulatedRounds {
  std::vector<std::uint8_t> symbols;       // sender's constellation indices
  std::vector<QuadratureSample> received;  // receiver heterodyne outcomes
};

SimulatedRounds simulate_rounds(const ExperimentConfig& cfg, RandomSource& rng,
                                std::uint64_t count, std::uint64_t stream_base) {
  const ChannelParams ch = cfg.channel.params();
  const Constellation con{cfg.protocol.amplitude, kDefaultRotation};
  SimulatedRounds out;
  out.symbols.resize(count);
  out.received.resize(count);
  RandomSource sym_rng = rng.stream(stream_base);
  RandomSource ch_rng = rng.stream(stream_base + 1);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto s = static_cast<std::uint8_t>(sym_rng.next_u64() & 3u);
    out.symbols[i] = s;
    out.received[i] =
        measure_heterodyne(received_mean(con.point(s), ch), ch, ch_rng);
  }
  return out;
}

AcceptanceExpectations characterize_expectations(const ExperimentConfig& cfg,
                                                 RandomSource& rng,
                                                 std::uint64_t rounds_per_state,
                                                 std::uint64_t stream_base) {
  const ChannelParams ch = cfg.channel.params();
  const Constellation con{cfg.protocol.amplitude, kDefaultRotation};
  AcceptanceExpectations e;
  RandomSource ch_rng = rng.stream(stream_base);
  std::vector<QuadratureSample> buf;
  buf.reserve(rounds_per_state);
  for (int s = 0; s < 4; ++s) {
    buf.clear();
    const ComplexAmplitude beta = received_mean(con.point(s), ch);
    for (std::uint64_t i = 0; i < rounds_per_state; ++i) {
      buf.push_back(measure_heterodyne(beta, ch, ch_rng));
    }
    const DisplacedMoments m = estimate_displaced_moments(buf, beta);
    e.mean_n[static_cast<std::size_t>(s)] = m.mean_n;
    e.mean_n2[static_cast<std::size_t>(s)] = m.mean_n2;
  }
  return e;
}

void write_report(const RunOptions& opts, const json& report) {
  if (!opts.out_dir) return;
  std::filesystem::create_directories(*opts.out_dir);
  std::ofstream out(*opts.out_dir / "report.json");
  out << report.dump(2) << '\n';
}

}  // namespace

ChannelParams ChannelConfig::params() const {
  ChannelParams p;
  p.eta_ch = eta_ch;
  p.eta_d = eta_d;
  p.nu_el = nu_el;
  p.excess_noise = excess_noise;
  p.validate();
  return p;
}

ReconcileConfig ReconciliationConfig::reconcile() const {
  ReconcileConfig rc;
  rc.list_size = list_size;
  rc.exact_llr = exact_llr;
  rc.crc = crc_len == 16 ? CrcSpec::crc16() : CrcSpec::crc8();
  rc.n_hash = n_hash;
  rc.validate();
  return rc;
}

RrcSpec DspConfig::rrc() const {
  RrcSpec spec;
  spec.rolloff = rolloff;
  spec.span_symbols = span_symbols;
  spec.samples_per_symbol = samples_per_symbol;
  spec.validate();
  return spec;
}

PilotConfig DspConfig::pilots() const {
  PilotConfig p;
  p.period_symbols = pilot_period;
  p.amplitude_ratio = pilot_ratio;
  p.phase = pilot_phase;
  p.validate();
  return p;
}

CdParams DspConfig::cd() const {
  CdParams p;
  p.dispersion_ps_nm_km = cd_dispersion;
  p.length_km = cd_length_km;
  p.wavelength_nm = cd_wavelength_nm;
  p.validate();
  return p;
}

DeviceResponse DspConfig::device() const {
  DeviceResponse d;
  d.cutoff_hz = device_cutoff_hz;
  d.dc_gain_db = device_gain_db;
  d.validate();
  return d;
}

void ExperimentConfig::validate() const {
  channel.params();
  if (protocol.rounds == 0) {
    throw std::runtime_error("config: protocol.rounds must be positive");
  }
  if (!(protocol.testing_ratio > 0.0) || !(protocol.testing_ratio < 1.0)) {
    throw std::runtime_error("config: protocol.testing_ratio must be in (0,1)");
  }
  if (!(protocol.amplitude > 0.0)) {
    throw std::runtime_error("config: protocol.amplitude must be positive");
  }
  for (double eps : {protocol.eps_et, protocol.eps_at, protocol.eps_bar,
                     protocol.eps_ec, protocol.eps_pa}) {
    if (!(eps > 0.0) || eps >= 1.0) {
      throw std::runtime_error("config: protocol epsilons must be in (0,1)");
    }
  }
  if (reconciliation.n_log2 < 2 || reconciliation.n_log2 > 24) {
    throw std::runtime_error("config: reconciliation.n_log2 out of range");
  }
  if (!(reconciliation.beta_qkd > 0.0) || !(reconciliation.beta_qkd < 1.0)) {
    throw std::runtime_error("config: reconciliation.beta_qkd must be in (0,1)");
  }
  if (reconciliation.crc_len != 8 && reconciliation.crc_len != 16) {
    throw std::runtime_error("config: reconciliation.crc_len must be 8 or 16");
  }
  if (reconciliation.construction != "pw" &&
      reconciliation.construction != "mc") {
    throw std::runtime_error(
        "config: reconciliation.construction must be 'pw' or 'mc'");
  }
  reconciliation.reconcile();
  dsp.rrc();
  dsp.pilots();
  dsp.cd();
  dsp.device();
  if (dsp.symbols == 0) {
    throw std::runtime_error("config: dsp.symbols must be positive");
  }
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config: parse error in " + path.string() + ": " +
                             e.what());
  }
  ExperimentConfig cfg;
  StrictObject o(j, "root");
  o.get("seed", cfg.seed);
  if (const json* v = o.take("channel")) parse_channel(*v, cfg.channel);
  if (const json* v = o.take("protocol")) parse_protocol(*v, cfg.protocol);
  if (const json* v = o.take("reconciliation")) {
    parse_reconciliation(*v, cfg.reconciliation);
  }
  if (const json* v = o.take("dsp")) parse_dsp(*v, cfg.dsp);
  if (const json* v = o.take("keyrate")) parse_keyrate(*v, cfg.keyrate);
  if (const json* v = o.take("ir_bench")) parse_ir_bench(*v, cfg.ir_bench);
  if (const json* v = o.take("acceptance_expectations")) {
    AcceptanceExpectations e;
    parse_expectations(*v, e);
    cfg.acceptance_expectations = e;
  }
  o.finish();
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["channel"] = {{"eta_ch", cfg.channel.eta_ch},
                  {"eta_d", cfg.channel.eta_d},
                  {"nu_el", cfg.channel.nu_el},
                  {"excess_noise", cfg.channel.excess_noise}};
  j["protocol"] = {{"amplitude", cfg.protocol.amplitude},
                   {"rounds", cfg.protocol.rounds},
                   {"testing_ratio", cfg.protocol.testing_ratio},
                   {"beta_et", cfg.protocol.beta_et},
                   {"outlier_fraction", cfg.protocol.outlier_fraction},
                   {"delta_r", cfg.protocol.delta_r},
                   {"detection_limit", cfg.protocol.detection_limit},
                   {"t_factor", cfg.protocol.t_factor},
                   {"two_sided_acceptance", cfg.protocol.two_sided_acceptance},
                   {"eps_et", cfg.protocol.eps_et},
                   {"eps_at", cfg.protocol.eps_at},
                   {"eps_bar", cfg.protocol.eps_bar},
                   {"eps_ec", cfg.protocol.eps_ec},
                   {"eps_pa", cfg.protocol.eps_pa}};
  j["reconciliation"] = {{"n_log2", cfg.reconciliation.n_log2},
                         {"beta_qkd", cfg.reconciliation.beta_qkd},
                         {"crc_len", cfg.reconciliation.crc_len},
                         {"list_size", cfg.reconciliation.list_size},
                         {"n_hash", cfg.reconciliation.n_hash},
                         {"construction", cfg.reconciliation.construction},
                         {"mc_trials", cfg.reconciliation.mc_trials},
                         {"exact_llr", cfg.reconciliation.exact_llr}};
  j["dsp"] = {{"symbol_rate", cfg.dsp.symbol_rate},
              {"rolloff", cfg.dsp.rolloff},
              {"span_symbols", cfg.dsp.span_symbols},
              {"samples_per_symbol", cfg.dsp.samples_per_symbol},
              {"symbols", cfg.dsp.symbols},
              {"pilot_period", cfg.dsp.pilot_period},
              {"pilot_ratio", cfg.dsp.pilot_ratio},
              {"pilot_phase", cfg.dsp.pilot_phase},
              {"cd_dispersion", cfg.dsp.cd_dispersion},
              {"cd_length_km", cfg.dsp.cd_length_km},
              {"cd_wavelength_nm", cfg.dsp.cd_wavelength_nm},
              {"cd_compensation", cfg.dsp.cd_compensation},
              {"device_cutoff_hz", cfg.dsp.device_cutoff_hz},
              {"device_gain_db", cfg.dsp.device_gain_db},
              {"equalizer_taps", cfg.dsp.equalizer_taps},
              {"gain_cap_db", cfg.dsp.gain_cap_db},
              {"noise_sigma", cfg.dsp.noise_sigma}};
  j["keyrate"] = {{"rounds_total", cfg.keyrate.rounds_total},
                  {"testing_ratio", cfg.keyrate.testing_ratio},
                  {"qber", cfg.keyrate.qber},
                  {"postselect_fraction", cfg.keyrate.postselect_fraction},
                  {"n_log2", cfg.keyrate.n_log2},
                  {"beta_qkd", cfg.keyrate.beta_qkd},
                  {"crc_len", cfg.keyrate.crc_len},
                  {"n_hash", cfg.keyrate.n_hash},
                  {"fer", cfg.keyrate.fer},
                  {"symbol_rate_baud", cfg.keyrate.symbol_rate_baud},
                  {"sidecar", cfg.keyrate.sidecar},
                  {"sidecar_second", cfg.keyrate.sidecar_second}};
  json grid = json::array();
  for (const IrBenchPoint& p : cfg.ir_bench.grid) {
    grid.push_back({{"qber", p.qber},
                    {"n_log2", p.n_log2},
                    {"beta_qkd", p.beta_qkd},
                    {"crc_len", p.crc_len},
                    {"list_size", p.list_size}});
  }
  j["ir_bench"] = {{"trials", cfg.ir_bench.trials},
                   {"construction", cfg.ir_bench.construction},
                   {"mc_trials", cfg.ir_bench.mc_trials},
                   {"n_hash", cfg.ir_bench.n_hash},
                   {"exact_llr", cfg.ir_bench.exact_llr},
                   {"grid", grid}};
  if (cfg.acceptance_expectations) {
    j["acceptance_expectations"] =
        expectations_to_json(*cfg.acceptance_expectations);
  }
  return j;
}

// ---------------------------------------------------------------------------
// protocol

RunOutcome run_protocol(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  if (opts.seed_override) cfg.seed = *opts.seed_override;
  if (opts.trials_override) cfg.protocol.rounds = *opts.trials_override;
  cfg.validate();

  RunOutcome outcome;
  json& report = outcome.report;
  report["command"] = "protocol";
  report["config"] = config_to_json(cfg);
  report["seed"] = cfg.seed;
  json& stages = report["stages"];
  RandomSource rng(cfg.seed);

  const auto abort_with = [&](const std::string& stage, const json& detail) {
    outcome.aborted = true;
    outcome.abort_stage = stage;
    report["aborted"] = true;
    report["abort_stage"] = stage;
    report["abort_detail"] = detail;
    write_report(opts, report);
    return outcome;
  };

  // Stage 1: state preparation, channel, heterodyne measurement.
  double t0 = now_seconds();
  const std::uint64_t n_total = cfg.protocol.rounds;
  SimulatedRounds sim = simulate_rounds(cfg, rng, n_total, 1);
  stages["transmission"] = {{"rounds", n_total},
                            {"seconds", now_seconds() - t0}};

  // Stage 2: random testing/key round selection.
  t0 = now_seconds();
  const TestRoundSplit split = split_rounds(n_total, cfg.protocol.testing_ratio);
  RandomSource select_rng = rng.stream(3);
  const std::vector<std::uint64_t> test_idx =
      select_test_rounds(n_total, cfg.protocol.testing_ratio, select_rng);
  std::vector<std::uint8_t> is_test(n_total, 0);
  for (std::uint64_t i : test_idx) is_test[i] = 1;
  stages["round_selection"] = {{"test_rounds", split.k_t},
                               {"key_rounds", split.n},
                               {"seconds", now_seconds() - t0}};

  // Stage 3: energy test over the testing rounds.
  t0 = now_seconds();
  EnergyTestParams et;
  et.beta_et = cfg.protocol.beta_et;
  et.max_outlier_fraction = cfg.protocol.outlier_fraction;
  et.k_t = test_idx.size();
  std::vector<QuadratureSample> test_samples;
  test_samples.reserve(test_idx.size());
  std::vector<std::uint8_t> test_symbols;
  test_symbols.reserve(test_idx.size());
  for (std::uint64_t i : test_idx) {
    test_samples.push_back(sim.received[i]);
    test_symbols.push_back(sim.symbols[i]);
  }
  const EnergyTestResult et_res = energy_test(test_samples, et);
  json stage_et = {{"beta_et", et.beta_et},
                   {"outliers", et_res.outliers},
                   {"allowed_outliers", et_res.allowed},
                   {"pass", et_res.pass},
                   {"seconds", now_seconds() - t0}};
  stages["energy_test"] = stage_et;
  if (!et_res.pass) return abort_with("energy_test", stage_et);

  // Stage 4: acceptance test on per-state displaced moments.
  t0 = now_seconds();
  const ChannelParams ch = cfg.channel.params();
  const Constellation con{cfg.protocol.amplitude, kDefaultRotation};
  AcceptanceExpectations expect;
  bool characterized_inline = false;
  if (cfg.acceptance_expectations) {
    expect = *cfg.acceptance_expectations;
  } else {
    // No pre-agreed expectations: characterize with an independent stream,
    // standing in for the calibration pass that precedes a real run.
    const std::uint64_t per_state = std::max<std::uint64_t>(1, split.k_t / 4);
    expect = characterize_expectations(cfg, rng, per_state, 101);
    characterized_inline = true;
  }
  std::array<std::vector<QuadratureSample>, 4> per_state_samples;
  for (std::size_t i = 0; i < test_samples.size(); ++i) {
    per_state_samples[test_symbols[i]].push_back(test_samples[i]);
  }
  for (int s = 0; s < 4; ++s) {
    if (per_state_samples[static_cast<std::size_t>(s)].empty()) {
      const json detail = {{"state", s}, {"error", "no testing samples"}};
      return abort_with("acceptance_test", detail);
    }
  }
  AcceptanceSet acc_set;
  acc_set.t_factor = cfg.protocol.t_factor;
  acc_set.eps_at = cfg.protocol.eps_at;
  acc_set.two_sided = cfg.protocol.two_sided_acceptance;
  const double m_lim = cfg.protocol.detection_limit;
  std::array<DisplacedMoments, 4> observed;
  for (int s = 0; s < 4; ++s) {
    const auto si = static_cast<std::size_t>(s);
    const auto& samples = per_state_samples[si];
    const ComplexAmplitude beta = received_mean(con.point(s), ch);
    observed[si] = estimate_displaced_moments(samples, beta);
    AcceptanceState& st = acc_set.states[si];
    st.beta = beta;
    st.n.expected = expect.mean_n[si];
    st.n.bound_x = m_lim * m_lim;
    st.n.rounds = samples.size();
    st.n2.expected = expect.mean_n2[si];
    st.n2.bound_x = m_lim * m_lim * m_lim * m_lim;
    st.n2.rounds = samples.size();
  }
  const AcceptanceVerdict acc = acceptance_test(observed, acc_set);
  json stage_at = {{"characterized_inline", characterized_inline},
                   {"pass", acc.pass},
                   {"seconds", now_seconds() - t0}};
  json checks = json::array();
  for (const AcceptanceCheck& c : acc.checks) {
    checks.push_back({{"state", c.state},
                      {"observable", c.observable == 0 ? "mean_n" : "mean_n2"},
                      {"observed", c.observed},
                      {"expected", c.expected},
                      {"mu", c.mu},
                      {"slack", c.slack},
                      {"pass", c.pass}});
  }
  stage_at["checks"] = checks;
  stages["acceptance_test"] = stage_at;
  if (!acc.pass) return abort_with("acceptance_test", stage_at);

  // Stage 5: key map and sifting over key-generation rounds.
  t0 = now_seconds();
  KeyMapParams km;
  km.delta_r = cfg.protocol.delta_r;
  km.detection_limit = cfg.protocol.detection_limit;
  km.validate();
  std::vector<QuadratureSample> key_samples;
  key_samples.reserve(split.n);
  std::vector<std::uint8_t> key_symbols;
  key_symbols.reserve(split.n);
  for (std::uint64_t i = 0; i < n_total; ++i) {
    if (!is_test[i]) {
      key_samples.push_back(sim.received[i]);
      key_symbols.push_back(sim.symbols[i]);
    }
  }
  const SiftResult sift_res = sift(key_samples, key_symbols, km);
  json stage_sift = {{"key_rounds", key_samples.size()},
                     {"kept_rounds", sift_res.kept},
                     {"postselect_fraction", sift_res.postselect_fraction},
                     {"symbol_qber", sift_res.symbol_qber},
                     {"qber", sift_res.bit_qber},
                     {"seconds", now_seconds() - t0}};
  if (opts.out_dir && sift_res.kept > 0) {
    std::filesystem::create_directories(*opts.out_dir);
    const auto bob_path = *opts.out_dir / "sifted_bob.bin";
    const auto alice_path = *opts.out_dir / "sifted_alice.bin";
    write_sifted_bits(bob_path.string(), sift_res.bob_bits);
    write_sifted_bits(alice_path.string(), sift_res.alice_bits);
    stage_sift["sifted_files"] = json::array({bob_path.string(), alice_path.string()});
  }
  stages["sifting"] = stage_sift;
  if (sift_res.kept == 0) return abort_with("sifting", stage_sift);

  // Stage 6: reverse reconciliation (the sender corrects toward the receiver).
  t0 = now_seconds();
  const std::uint32_t block_len =
      1u << static_cast<unsigned>(cfg.reconciliation.n_log2);
  const std::uint64_t total_bits = sift_res.alice_bits.size();
  const std::uint64_t blocks = total_bits / block_len;
  const ReconcileConfig rc = cfg.reconciliation.reconcile();
  const double qber = sift_res.bit_qber;
  const std::uint32_t dimension =
      code_dimension(cfg.reconciliation.n_log2, cfg.reconciliation.beta_qkd,
                     qber, rc.crc.length);
  PolarCode code;
  if (cfg.reconciliation.construction == "mc") {
    RandomSource mc_rng = rng.stream(7);
    code = construct_monte_carlo(
        cfg.reconciliation.n_log2, dimension, qber,
        std::max<std::uint64_t>(cfg.reconciliation.mc_trials, 10'000), mc_rng);
  } else {
    code = construct_pw(cfg.reconciliation.n_log2, dimension);
  }
  RandomSource hash_rng = rng.stream(9);
  std::uint64_t ok_blocks = 0;
  std::uint64_t failed_blocks = 0;
  std::uint64_t disclosed_bits = 0;
  std::uint64_t residual_errors = 0;
  std::vector<std::uint8_t> reconciled_key;  // receiver-side verified bits
  std::vector<std::uint8_t> alice_blk(block_len);
  std::vector<std::uint8_t> bob_blk(block_len);
  for (std::uint64_t b = 0; b < blocks; ++b) {
    const std::uint8_t* ap = sift_res.alice_bits.data() + b * block_len;
    const std::uint8_t* bp = sift_res.bob_bits.data() + b * block_len;
    std::copy(ap, ap + block_len, alice_blk.begin());
    std::copy(bp, bp + block_len, bob_blk.begin());
    const ReconcileResult rr =
        reconcile_block(bob_blk, alice_blk, code, rc, qber, hash_rng);
    disclosed_bits += rr.disclosed_bits;
    if (rr.success) {
      ++ok_blocks;
      reconciled_key.insert(reconciled_key.end(), bob_blk.begin(),
                            bob_blk.end());
      for (std::uint32_t i = 0; i < block_len; ++i) {
        residual_errors +=
            static_cast<std::uint64_t>(rr.corrected[i] != bob_blk[i]);
      }
    } else {
      ++failed_blocks;
    }
  }
  const std::uint64_t leftover_bits = total_bits - blocks * block_len;
  json stage_ec = {{"block_length", block_len},
                   {"code_dimension", dimension},
                   {"construction", cfg.reconciliation.construction},
                   {"blocks", blocks},
                   {"verified_blocks", ok_blocks},
                   {"failed_blocks", failed_blocks},
                   {"fer", blocks == 0 ? 0.0
                                       : static_cast<double>(failed_blocks) /
                                             static_cast<double>(blocks)},
                   {"disclosed_bits", disclosed_bits},
                   {"residual_errors_after_verify", residual_errors},
                   {"leftover_bits_discarded", leftover_bits},
                   {"seconds", now_seconds() - t0}};
  stages["reconciliation"] = stage_ec;
  if (blocks == 0) return abort_with("reconciliation", stage_ec);

  // Stage 7: privacy amplification.
  t0 = now_seconds();
  const EpsilonBudget budget = epsilon_budget(
      cfg.protocol.eps_pa, cfg.protocol.eps_bar, cfg.protocol.eps_et,
      cfg.protocol.eps_at, cfg.protocol.eps_ec);
  json stage_pa = {{"eps_cor", budget.eps_cor},
                   {"eps_sec", budget.eps_sec},
                   {"eps_total", budget.eps_total}};
  if (!cfg.keyrate.sidecar.empty()) {
    const EntropySidecar sc = read_entropy_sidecar(cfg.keyrate.sidecar);
    KeyLengthParams kl;
    kl.n = split.n;
    kl.entropy_rate = sc.entropy_rate;
    kl.delta_bar = sc.delta_bar;
    kl.delta_w = sc.delta_w;
    kl.leak_ec = static_cast<double>(disclosed_bits);
    kl.eps_pa = cfg.protocol.eps_pa;
    kl.eps_ec = cfg.protocol.eps_ec;
    kl.eps_et = cfg.protocol.eps_et;
    kl.eps_at = cfg.protocol.eps_at;
    kl.eps_bar = cfg.protocol.eps_bar;
    const std::uint64_t l = key_length(kl);
    stage_pa["entropy_rate"] = sc.entropy_rate;
    stage_pa["key_length_bits"] = l;
    if (l == 0) {
      stage_pa["seconds"] = now_seconds() - t0;
      stages["privacy_amplification"] = stage_pa;
      return abort_with("privacy_amplification", stage_pa);
    }
    const std::uint64_t m = reconciled_key.size();
    RandomSource pa_rng = rng.stream(11);
    const ToeplitzSeed seed = draw_toeplitz_seed(l, m, pa_rng);
    const std::vector<std::uint8_t> final_key =
        m > (1u << 18) ? toeplitz_hash_fft(reconciled_key, seed, l)
                       : toeplitz_hash(reconciled_key, seed, l);
    stage_pa["input_bits"] = m;
    stage_pa["seed_digest"] = toeplitz_seed_digest(seed);
    stage_pa["secret_bits_per_round"] =
        static_cast<double>(l) / static_cast<double>(split.n);
    if (opts.out_dir) {
      std::filesystem::create_directories(*opts.out_dir);
      KeyFile kf;
      kf.length_bits = l;
      kf.seed_digest = toeplitz_seed_digest(seed);
      kf.budget = budget;
      kf.bits = final_key;
      write_key_file(*opts.out_dir / "key.bin", kf);
      stage_pa["key_file"] = (*opts.out_dir / "key.bin").string();
    }
  } else {
    stage_pa["note"] =
        "no entropy bound file supplied; stopped after leak accounting";
  }
  stage_pa["seconds"] = now_seconds() - t0;
  stages["privacy_amplification"] = stage_pa;

  report["aborted"] = false;
  write_report(opts, report);
  return outcome;
}

// ---------------------------------------------------------------------------
// ir-bench

std::string ir_bench_csv(const json& rows) {
  std::ostringstream csv;
  csv << "qber,n_log2,beta_qkd,crc_len,list_size,trials,failures,fer,ci_lo,"
         "ci_hi\n";
  char buf[96];
  for (const json& r : rows) {
    std::snprintf(buf, sizeof buf, "%g,%d,%g,%d,%u,%llu,%llu,%.6g,%.6g,%.6g\n",
                  r["qber"].get<double>(), r["n_log2"].get<int>(),
                  r["beta_qkd"].get<double>(), r["crc_len"].get<int>(),
                  static_cast<unsigned>(r["list_size"].get<std::uint32_t>()),
                  static_cast<unsigned long long>(
                      r["trials"].get<std::uint64_t>()),
                  static_cast<unsigned long long>(
                      r["failures"].get<std::uint64_t>()),
                  r["fer"].get<double>(), r["ci_lo"].get<double>(),
                  r["ci_hi"].get<double>());
    csv << buf;
  }
  return csv.str();
}

RunOutcome run_ir_bench(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  if (opts.seed_override) cfg.seed = *opts.seed_override;
  if (opts.trials_override) cfg.ir_bench.trials = *opts.trials_override;
  cfg.validate();
  if (cfg.ir_bench.grid.empty()) {
    IrBenchPoint pt;
    pt.qber = 0.1;
    pt.n_log2 = cfg.reconciliation.n_log2;
    pt.beta_qkd = cfg.reconciliation.beta_qkd;
    pt.crc_len = cfg.reconciliation.crc_len;
    pt.list_size = cfg.reconciliation.list_size;
    cfg.ir_bench.grid.push_back(pt);
  }

  RunOutcome outcome;
  json& report = outcome.report;
  report["command"] = "ir-bench";
  report["config"] = config_to_json(cfg);
  report["seed"] = cfg.seed;
  RandomSource rng(cfg.seed);
  json rows = json::array();
  std::uint64_t cell_index = 0;
  for (const IrBenchPoint& pt : cfg.ir_bench.grid) {
    const double t0 = now_seconds();
    ReconcileConfig rc;
    rc.list_size = pt.list_size;
    rc.exact_llr = cfg.ir_bench.exact_llr;
    rc.crc = pt.crc_len == 16 ? CrcSpec::crc16() : CrcSpec::crc8();
    rc.n_hash = cfg.ir_bench.n_hash;
    rc.validate();
    const std::uint32_t dimension =
        code_dimension(pt.n_log2, pt.beta_qkd, pt.qber, rc.crc.length);
    PolarCode code;
    RandomSource cell_rng = rng.stream(1000 + cell_index);
    if (cfg.ir_bench.construction == "mc") {
      code = construct_monte_carlo(
          pt.n_log2, dimension, pt.qber,
          std::max<std::uint64_t>(cfg.ir_bench.mc_trials, 10'000), cell_rng);
    } else {
      code = construct_pw(pt.n_log2, dimension);
    }
    RandomSource trial_rng = rng.stream(5000 + cell_index);
    const FerResult fer =
        fer_benchmark(code, rc, pt.qber, cfg.ir_bench.trials, trial_rng);
    rows.push_back({{"qber", pt.qber},
                    {"n_log2", pt.n_log2},
                    {"beta_qkd", pt.beta_qkd},
                    {"crc_len", pt.crc_len},
                    {"list_size", pt.list_size},
                    {"trials", fer.trials},
                    {"failures", fer.failures},
                    {"fer", fer.fer},
                    {"ci_lo", fer.ci_lo},
                    {"ci_hi", fer.ci_hi},
                    {"undetected", fer.undetected},
                    {"dimension", dimension},
                    {"disclosed_total", fer.disclosed_total},
                    {"seconds", now_seconds() - t0}});
    ++cell_index;
  }
  report["rows"] = rows;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    std::ofstream csv(*opts.out_dir / "ir_bench.csv");
    csv << ir_bench_csv(rows);
    report["csv_file"] = (*opts.out_dir / "ir_bench.csv").string();
  }
  write_report(opts, report);
  return outcome;
}

// ---------------------------------------------------------------------------
// dsp-loopback

RunOutcome run_dsp_loopback(const ExperimentConfig& cfg_in,
                            const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  if (opts.seed_override) cfg.seed = *opts.seed_override;
  if (opts.trials_override) cfg.dsp.symbols = *opts.trials_override;
  cfg.validate();

  RunOutcome outcome;
  json& report = outcome.report;
  report["command"] = "dsp-loopback";
  report["config"] = config_to_json(cfg);
  report["seed"] = cfg.seed;
  const double t0 = now_seconds();

  RandomSource rng(cfg.seed);
  RandomSource sym_rng = rng.stream(1);
  const Constellation con{cfg.protocol.amplitude, kDefaultRotation};
  const std::uint64_t n_sym = cfg.dsp.symbols;
  std::vector<std::uint8_t> tx_indices(n_sym);
  std::vector<cdouble> tx_symbols(n_sym);
  for (std::uint64_t i = 0; i < n_sym; ++i) {
    tx_indices[i] = static_cast<std::uint8_t>(sym_rng.next_u64() & 3u);
    tx_symbols[i] = con.point(tx_indices[i]);
  }
  const PilotConfig pilots = cfg.dsp.pilots();
  const std::vector<cdouble> frame =
      insert_pilots(tx_symbols, pilots, cfg.protocol.amplitude);

  const RrcSpec rrc = cfg.dsp.rrc();
  Waveform wave = rrc_shape(frame, rrc, cfg.dsp.symbol_rate);

  // Transmitter device response and its digital equalization. A flat device
  // (cutoff 0) distorts nothing and its equalizer is an exact identity, so the
  // stage always runs and the chain shape does not depend on the config.
  const DeviceResponse dev = cfg.dsp.device();
  if (cfg.dsp.device_cutoff_hz > 0.0) {
    wave = apply_response(wave, dev);
  }
  wave = equalize(wave, dev, cfg.dsp.equalizer_taps, cfg.dsp.gain_cap_db);

  // Fiber dispersion, optional receiver noise, then compensation.
  const CdParams cd = cfg.dsp.cd();
  wave = cd_apply(wave, cd);
  if (cfg.dsp.noise_sigma > 0.0) {
    RandomSource noise_rng = rng.stream(2);
    for (cdouble& s : wave.samples) {
      const auto [a, b] = noise_rng.normal_pair();
      s += cdouble(a, b) * cfg.dsp.noise_sigma;
    }
  }
  if (cfg.dsp.cd_compensation) {
    wave = cd_compensate(wave, cd);
  }

  // Receiver: pilot-aided carrier recovery, equalization, matched filter.
  PhaseRecoveryResult pr =
      phase_recover(wave, rrc, pilots, frame.size(), cfg.protocol.amplitude);
  Waveform rx = equalize(pr.waveform, DeviceResponse{}, cfg.dsp.equalizer_taps,
                         cfg.dsp.gain_cap_db);
  rx = matched_filter(rx, rrc);
  const std::vector<cdouble> rx_slots = sample_symbols(rx, rrc, frame.size());
  std::vector<cdouble> rx_symbols = strip_pilots(rx_slots, pilots);
  if (rx_symbols.size() > n_sym) rx_symbols.resize(n_sym);

  std::uint64_t symbol_errors = 0;
  for (std::uint64_t i = 0; i < rx_symbols.size(); ++i) {
    symbol_errors +=
        static_cast<std::uint64_t>(quadrant_symbol(rx_symbols[i]) !=
                                   static_cast<int>(tx_indices[i]));
  }
  const double evm = error_vector_magnitude(
      rx_symbols, std::span<const cdouble>(tx_symbols).first(rx_symbols.size()));

  double phase_mean = 0.0;
  double phase_rms = 0.0;
  if (!pr.pilot_phases.empty()) {
    for (double ph : pr.pilot_phases) phase_mean += ph;
    phase_mean /= static_cast<double>(pr.pilot_phases.size());
    for (double ph : pr.pilot_phases) {
      phase_rms += (ph - phase_mean) * (ph - phase_mean);
    }
    phase_rms = std::sqrt(phase_rms / static_cast<double>(pr.pilot_phases.size()));
  }

  report["symbols"] = rx_symbols.size();
  report["symbol_errors"] = symbol_errors;
  report["symbol_error_rate"] = static_cast<double>(symbol_errors) /
                                static_cast<double>(rx_symbols.size());
  report["evm_rms"] = evm;
  report["mean_phase_estimate"] = phase_mean;
  report["phase_jitter_rms"] = phase_rms;
  report["pilots_used"] = pr.pilot_phases.size();
  report["seconds"] = now_seconds() - t0;

  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    write_waveform(*opts.out_dir / "waveform.bin", rx);
    report["waveform_file"] = (*opts.out_dir / "waveform.bin").string();
  }
  write_report(opts, report);
  return outcome;
}

// ---------------------------------------------------------------------------
// keyrate

namespace {

struct KeyrateLane {
  EntropySidecar sidecar;
  std::uint64_t key_rounds = 0;
  std::uint64_t blocks = 0;
  std::uint64_t leak = 0;
  std::uint64_t key_length_bits = 0;
  double per_symbol_rate = 0.0;
  double skr_bits_per_s = 0.0;
};

KeyrateLane keyrate_lane(const KeyrateConfig& kc, const ProtocolConfig& pc,
                         const EntropySidecar& sc) {
  KeyrateLane lane;
  lane.sidecar = sc;
  const TestRoundSplit split = split_rounds(kc.rounds_total, kc.testing_ratio);
  lane.key_rounds = split.n;
  const long double kept_bits = 2.0L * static_cast<long double>(split.n) *
                                static_cast<long double>(kc.postselect_fraction);
  const std::uint64_t block_len = 1ull << static_cast<unsigned>(kc.n_log2);
  lane.blocks = static_cast<std::uint64_t>(
      std::floor(static_cast<double>(kept_bits / block_len)));

  const std::uint32_t dimension =
      code_dimension(kc.n_log2, kc.beta_qkd, kc.qber, kc.crc_len);
  LeakAccount acct;
  acct.n_ec = block_len;
  // Disclosed per verified block: frozen bits + CRC + verification hash,
  // i.e. n_ec - (dimension - crc_len) + n_hash.
  acct.k = dimension - static_cast<std::uint32_t>(kc.crc_len);
  acct.n_hash = kc.n_hash;
  acct.blocks = lane.blocks;
  acct.fer = kc.fer;
  const double leak = leak_ec(acct);
  lane.leak = static_cast<std::uint64_t>(leak);

  KeyLengthParams kl;
  kl.n = split.n;
  kl.entropy_rate = sc.entropy_rate;
  kl.delta_bar = sc.delta_bar;
  kl.delta_w = sc.delta_w;
  kl.leak_ec = leak;
  kl.eps_pa = pc.eps_pa;
  kl.eps_ec = pc.eps_ec;
  kl.eps_et = pc.eps_et;
  kl.eps_at = pc.eps_at;
  kl.eps_bar = pc.eps_bar;
  lane.key_length_bits = key_length(kl);
  lane.per_symbol_rate = static_cast<double>(lane.key_length_bits) /
                         static_cast<double>(kc.rounds_total);
  lane.skr_bits_per_s = lane.per_symbol_rate * kc.symbol_rate_baud;
  return lane;
}

json lane_to_json(const KeyrateLane& lane) {
  return json{{"entropy_rate", lane.sidecar.entropy_rate},
              {"delta_bar", lane.sidecar.delta_bar},
              {"delta_w", lane.sidecar.delta_w},
              {"key_rounds", lane.key_rounds},
              {"blocks", lane.blocks},
              {"leak_ec_bits", lane.leak},
              {"key_length_bits", lane.key_length_bits},
              {"per_symbol_rate", lane.per_symbol_rate},
              {"skr_bits_per_s", lane.skr_bits_per_s}};
}

}  // namespace

RunOutcome run_keyrate(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  if (opts.seed_override) cfg.seed = *opts.seed_override;
  cfg.validate();
  if (cfg.keyrate.sidecar.empty()) {
    throw std::runtime_error("keyrate: config needs keyrate.sidecar path");
  }

  RunOutcome outcome;
  json& report = outcome.report;
  report["command"] = "keyrate";
  report["config"] = config_to_json(cfg);
  report["seed"] = cfg.seed;

  const EntropySidecar first = read_entropy_sidecar(cfg.keyrate.sidecar);
  const KeyrateLane lane1 = keyrate_lane(cfg.keyrate, cfg.protocol, first);
  report["lanes"] = json::array({lane_to_json(lane1)});
  double aggregate = lane1.skr_bits_per_s;
  if (!cfg.keyrate.sidecar_second.empty()) {
    const EntropySidecar second =
        read_entropy_sidecar(cfg.keyrate.sidecar_second);
    const KeyrateLane lane2 = keyrate_lane(cfg.keyrate, cfg.protocol, second);
    report["lanes"].push_back(lane_to_json(lane2));
    aggregate = aggregate_skr(lane1.per_symbol_rate, lane2.per_symbol_rate,
                              cfg.keyrate.symbol_rate_baud);
  }
  report["aggregate_skr_bits_per_s"] = aggregate;
  const EpsilonBudget budget = epsilon_budget(
      cfg.protocol.eps_pa, cfg.protocol.eps_bar, cfg.protocol.eps_et,
      cfg.protocol.eps_at, cfg.protocol.eps_ec);
  report["eps_cor"] = budget.eps_cor;
  report["eps_sec"] = budget.eps_sec;
  report["eps_total"] = budget.eps_total;
  write_report(opts, report);
  return outcome;
}

// ---------------------------------------------------------------------------
// characterize

RunOutcome run_characterize(const ExperimentConfig& cfg_in,
                            const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  if (opts.seed_override) cfg.seed = *opts.seed_override;
  if (opts.trials_override) cfg.protocol.rounds = *opts.trials_override;
  cfg.validate();

  RunOutcome outcome;
  json& report = outcome.report;
  report["command"] = "characterize";
  report["config"] = config_to_json(cfg);
  report["seed"] = cfg.seed;
  const double t0 = now_seconds();

  RandomSource rng(cfg.seed);
  const TestRoundSplit split =
      split_rounds(cfg.protocol.rounds, cfg.protocol.testing_ratio);
  const std::uint64_t per_state = std::max<std::uint64_t>(1, split.k_t / 4);
  const AcceptanceExpectations e =
      characterize_expectations(cfg, rng, per_state, 1);

  // Outlier statistics for the energy-test radius at this operating point.
  const ChannelParams ch = cfg.channel.params();
  const Constellation con{cfg.protocol.amplitude, kDefaultRotation};
  RandomSource et_rng = rng.stream(50);
  std::uint64_t outliers = 0;
  const std::uint64_t et_rounds =
      std::min<std::uint64_t>(cfg.protocol.rounds, 1'000'000);
  for (std::uint64_t i = 0; i < et_rounds; ++i) {
    const auto s = static_cast<int>(et_rng.next_u64() & 3u);
    const QuadratureSample q =
        measure_heterodyne(received_mean(con.point(s), ch), ch, et_rng);
    outliers += static_cast<std::uint64_t>(std::abs(q.gamma()) >= cfg.protocol.beta_et);
  }

  report["rounds_per_state"] = per_state;
  report["acceptance_expectations"] = expectations_to_json(e);
  report["energy_test"] = {
      {"beta_et", cfg.protocol.beta_et},
      {"rounds", et_rounds},
      {"outliers", outliers},
      {"outlier_fraction",
       static_cast<double>(outliers) / static_cast<double>(et_rounds)}};
  report["seconds"] = now_seconds() - t0;

  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    json accept = expectations_to_json(e);
    accept["rounds_per_state"] = per_state;
    accept["t_factor"] = cfg.protocol.t_factor;
    accept["eps_at"] = cfg.protocol.eps_at;
    std::ofstream out(*opts.out_dir / "acceptance_set.json");
    out << accept.dump(2) << '\n';
    report["acceptance_set_file"] =
        (*opts.out_dir / "acceptance_set.json").string();
  }
  write_report(opts, report);
  return outcome;
}

}  // namespace cvqkd
