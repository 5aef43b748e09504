#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "risloc/bcrb.hpp"
#include "risloc/config.hpp"
#include "risloc/em_learner.hpp"
#include "risloc/metrics.hpp"

namespace risloc {

// Failure while preparing outputs (unwritable directory and the like).
class RunError : public std::runtime_error {
 public:
  explicit RunError(const std::string& what) : std::runtime_error(what) {}
};

enum class Stream : std::uint64_t { scene = 1, noise = 2 };

// seed XOR a splitmix64 hash of (trial, SNR bit pattern, stream). Every solver of a trial
// sees the same scene and noise.
std::uint64_t trial_seed(std::uint64_t seed, int trial, double snr_db, Stream stream);

struct SolverOutcome {
  SolverKind kind = SolverKind::mp;
  TrialMetrics metrics;
  double seconds = 0.0;
  bool converged = false;
  bool failed = false;
  std::string error;
  std::optional<EmState> em;
  Grid final_grid;
};

struct TrialResult {
  int trial = 0;
  double snr_db = 0.0;
  double noise_variance = 0.0;
  std::vector<SolverOutcome> solvers;
  std::optional<BcrbSummary> bound;
};

// Oracle priors for the non-learning solvers: sparsity K/(Q*U) and the configured gain statistics.
RowPrior oracle_row_prior(const SystemConfig& config, const Grid& grid);

// Runs every requested solver (and the bound when enabled) on one seeded realization.
// Solver exceptions are captured in the outcome rather than thrown.
TrialResult run_trial(const ExperimentSpec& spec, int trial, double snr_db);

struct RunSummary {
  std::string output_dir;
  int failures = 0;       // solver runs that threw
  int nonconverged = 0;   // solver runs that stopped without converging
  std::vector<std::string> files;
};

// Writes summary.csv, timing.csv, bcrb.csv (when enabled), manifest.json and, with em_traces,
// per-trial EM trace and grid snapshot CSVs. RISLOC_OUTPUT_DIR overrides spec.output_dir.
// `progress`, when set, is called once per finished trial (from the calling thread, in order).
RunSummary run_experiment(const ExperimentSpec& spec,
                          const std::function<void(const TrialResult&)>& progress = {});

// Shortest text that parses back to the same double; "nan"/"inf"/"-inf" otherwise.
std::string format_double(double value);

struct MetricStats {
  double mean = 0.0;
  double stderr_ = 0.0;
  int count = 0;  // finite samples
};
MetricStats summarize(const std::vector<double>& samples);

}  // namespace risloc
