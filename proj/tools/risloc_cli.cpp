#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "risloc/config.hpp"
#include "risloc/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kSolverFailures = 3;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> trials;
  std::vector<double> snr;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("config", o.config, "experiment file (key = value sections or JSON); defaults when omitted");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory (takes precedence over RISLOC_OUTPUT_DIR)");
  cmd->add_option("--trials", o.trials, "Monte-Carlo trials per SNR point");
  cmd->add_option("--snr", o.snr, "SNR points in dB, replaces the configured list")->delimiter(',');
  cmd->add_flag("-q,--quiet", o.quiet, "no per-trial progress");
}

risloc::ExperimentSpec resolve(const Overrides& o) {
  risloc::ExperimentSpec spec = o.config.empty() ? risloc::ExperimentSpec{} : risloc::load_config(o.config);
  if (o.seed) spec.seed = *o.seed;
  if (o.trials) spec.trials = *o.trials;
  if (!o.snr.empty()) spec.snr_db = o.snr;
  spec.validate();
  return spec;
}

int execute(risloc::ExperimentSpec spec, const Overrides& o) {
  if (o.out) setenv("RISLOC_OUTPUT_DIR", o.out->c_str(), 1);
  const std::size_t total = spec.snr_db.size() * static_cast<std::size_t>(spec.trials);
  std::size_t done = 0;
  auto progress = [&](const risloc::TrialResult& r) {
    ++done;
    if (o.quiet) return;
    std::cerr << "[" << done << "/" << total << "] snr " << r.snr_db << " dB trial " << r.trial;
    for (const auto& s : r.solvers) {
      std::cerr << "  " << risloc::solver_name(s.kind) << ": ";
      if (s.failed)
        std::cerr << "failed (" << s.error << ")";
      else
        std::cerr << "nmse " << s.metrics.nmse_gain << " ber " << s.metrics.ber;
    }
    if (r.bound) std::cerr << "  bcrb " << r.bound->gain_nmse;
    std::cerr << '\n';
  };
  const risloc::RunSummary s = risloc::run_experiment(spec, progress);
  for (const auto& f : s.files) std::cout << f << '\n';
  if (s.nonconverged > 0) std::cerr << s.nonconverged << " solver runs stopped without converging\n";
  if (s.failures > 0) {
    std::cerr << s.failures << " solver runs failed; see failures.csv\n";
    return kSolverFailures;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RIS-aided joint localization and reflection-modulation recovery benchmarks"};
  app.require_subcommand(1);

  Overrides run_o, bcrb_o, validate_o;
  CLI::App* run = app.add_subcommand("run", "run the Monte-Carlo experiment and write CSVs");
  add_common(run, run_o);
  CLI::App* bcrb = app.add_subcommand("bcrb", "write the bound only");
  add_common(bcrb, bcrb_o);
  CLI::App* validate = app.add_subcommand("validate", "check a config file and print the resolved settings");
  validate->add_option("config", validate_o.config, "experiment file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*validate) {
      std::cout << risloc::to_json(resolve(validate_o)) << '\n';
      return kOk;
    }
    if (*bcrb) {
      risloc::ExperimentSpec spec = resolve(bcrb_o);
      spec.solvers.clear();
      spec.bcrb = true;
      return execute(spec, bcrb_o);
    }
    return execute(resolve(run_o), run_o);
  } catch (const risloc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const risloc::RunError& e) {
    std::cerr << "output error: " << e.what() << '\n';
    return kConfigError;
  }
}
