#pragma once

#include <functional>
#include <vector>

#include "risloc/dictionary.hpp"
#include "risloc/mixture.hpp"
#include "risloc/types.hpp"

namespace risloc {

// parallel: every block's linear steps, then all rows are denoised at once.
// swept: rows are visited in turn and the block residuals are refreshed after each row,
// which tolerates strongly correlated operators.
enum class Schedule { parallel, swept };

struct SolverOptions {
  Schedule schedule = Schedule::swept;
  int max_iterations = 100;
  double tolerance = 1e-6;   // relative change of the coefficient estimate
  double damping = 1.0;      // 1 disables damping
  bool damp_variances = false;  // also damp the coefficient variances
  double min_damping = 1.0 / 64.0;
  double variance_floor = 1e-12;
  double variance_ceiling = 1e12;
  int divergence_window = 5;
  double blowup_factor = 1e3;   // residual above this multiple of the best one restarts from the best state
  // Per-iteration factor in (0,1) that shrinks an inflated noise variance from the mean data
  // power down to the true one; 0 disables.
  double noise_annealing = 0.0;
  double detection_threshold = 0.5;
};

struct PosteriorEstimate {
  CMatrix mean;          // Q*U x M
  RMatrix variance;      // Q*U x M
  RMatrix active_prob;   // per-entry support probabilities
  RVector row_prob;      // per-row support probability
  std::vector<BernoulliMixture> row_belief;  // per-row belief over the shared gain (row-coupled solver only)
  std::vector<double> residual_trace;        // ||Y - Z mean||^2 per iteration
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  bool underflow = false;
  bool degenerate_column = false;

  std::vector<int> support(double threshold = 0.5) const;
};

struct OutputStep {
  CVector p, q, a;
  RVector vp, vq, va;
};

OutputStep awgn_output_step(const BlockOperator& z, const CVector& zeta, const RVector& v_zeta, const CVector& a_prev,
                            const CVector& y, double noise_variance);

struct InputStep {
  CVector r;
  RVector vr;
  bool degenerate = false;
};

InputStep input_linear_step(const BlockOperator& z, const CVector& a, const RVector& va, const CVector& zeta,
                            double variance_ceiling = 1e12);

// Maps the pseudo-observations (r, v^r) of every block to posterior means, variances and
// support probabilities. Returns true if a weight underflow was hit.
struct DenoiserOutput {
  CMatrix mean;
  RMatrix variance;
  RMatrix active_prob;
  RVector row_prob;
  std::vector<BernoulliMixture> row_belief;
};
using Denoiser = std::function<bool(const CMatrix& r, const RMatrix& vr, DenoiserOutput& out)>;

// Shared GAMP loop. Column m of y is explained by blocks[m].
PosteriorEstimate run_gamp(const CMatrix& y, const std::vector<const BlockOperator*>& blocks, double noise_variance,
                           double initial_variance, const Denoiser& denoiser, const SolverOptions& options);

// Row-coupled denoiser: shared gain per row, per-block DPSK phase.
Denoiser make_row_coupled_denoiser(const RowPrior& prior, double variance_floor);

// Multiplies means by s and variances by s^2 (undoes a solve on data divided by s).
void scale_posterior(PosteriorEstimate& estimate, double s);

PosteriorEstimate run_mp(const CMatrix& y, const Dictionary& dictionary, const RowPrior& prior, double noise_variance,
                         const SolverOptions& options = {});

}  // namespace risloc
