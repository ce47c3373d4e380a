#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "cvqkd/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAbort = 2;      // protocol abort (statistical test tripped)
constexpr int kExitUsage = 64;     // bad flags or bad config
constexpr int kExitInternal = 70;  // unexpected failure

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> trials;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "JSON configuration file (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Override the run seed");
  cmd->add_option("--trials", args.trials,
                  "Override the per-command workload "
                  "(rounds, benchmark trials or symbols)");
  cmd->add_option("--out", args.out_dir,
                  "Directory for reports, key files and waveforms");
}

cvqkd::ExperimentConfig resolve_config(const CommonArgs& args) {
  if (args.config_path.empty()) return cvqkd::default_config();
  return cvqkd::load_config(args.config_path);
}

cvqkd::RunOptions resolve_options(const CommonArgs& args) {
  cvqkd::RunOptions opts;
  opts.seed_override = args.seed;
  opts.trials_override = args.trials;
  if (args.out_dir) opts.out_dir = *args.out_dir;
  return opts;
}

int emit(const cvqkd::RunOutcome& outcome) {
  std::cout << outcome.report.dump(2) << '\n';
  if (outcome.aborted) {
    std::cerr << "aborted at stage: " << outcome.abort_stage << '\n';
    return kExitAbort;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Discrete-modulated continuous-variable QKD simulator and "
      "post-processing toolkit"};
  app.require_subcommand(1);

  CommonArgs protocol_args, ir_args, dsp_args, keyrate_args, char_args;

  CLI::App* protocol = app.add_subcommand(
      "protocol", "End-to-end run: transmission, tests, sifting, "
                  "reconciliation, privacy amplification");
  add_common(protocol, protocol_args);

  CLI::App* ir_bench = app.add_subcommand(
      "ir-bench", "Frame-error-rate sweep of the reconciliation code");
  add_common(ir_bench, ir_args);

  CLI::App* dsp_loopback = app.add_subcommand(
      "dsp-loopback", "Transmit-receive DSP chain on a clean loopback");
  add_common(dsp_loopback, dsp_args);

  CLI::App* keyrate = app.add_subcommand(
      "keyrate", "Finite-size key length and rate from an entropy bound file");
  add_common(keyrate, keyrate_args);

  CLI::App* characterize = app.add_subcommand(
      "characterize", "Estimate acceptance expectations and outlier rates "
                      "for the configured operating point");
  add_common(characterize, char_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (protocol->parsed()) {
      return emit(cvqkd::run_protocol(resolve_config(protocol_args),
                                      resolve_options(protocol_args)));
    }
    if (ir_bench->parsed()) {
      return emit(cvqkd::run_ir_bench(resolve_config(ir_args),
                                      resolve_options(ir_args)));
    }
    if (dsp_loopback->parsed()) {
      return emit(cvqkd::run_dsp_loopback(resolve_config(dsp_args),
                                          resolve_options(dsp_args)));
    }
    if (keyrate->parsed()) {
      return emit(cvqkd::run_keyrate(resolve_config(keyrate_args),
                                     resolve_options(keyrate_args)));
    }
    if (characterize->parsed()) {
      return emit(cvqkd::run_characterize(resolve_config(char_args),
                                          resolve_options(char_args)));
    }
  } catch (const std::runtime_error& e) {
    // Configuration and input-file problems: report and exit as usage error.
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    // Out-of-range values from flags or config files trip library argument
    // guards; they are usage errors too.
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}
