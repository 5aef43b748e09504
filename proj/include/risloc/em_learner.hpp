#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "risloc/core_model.hpp"
#include "risloc/dictionary.hpp"
#include "risloc/mp_solver.hpp"
#include "risloc/types.hpp"

namespace risloc {

enum class GridBlock { angles, delays };

struct EmOptions {
  int max_outer = 70;
  int max_inner = 10;
  double inner_tolerance = 1e-3;   // relative change of the noise variance
  double outer_tolerance = 1e-6;   // relative objective improvement
  double initial_step = 1e-2;      // first step moves the steepest point by this fraction of the spacing
  double min_step_ratio = 1e-12;   // smallest step relative to the first one
  int device_guess = 5;
  double initial_snr_db = 20.0;
  bool learn_grid = true;
  int snapshot_every = 10;
};

struct EmTraceEntry {
  int iteration = 0;
  double objective_before = 0.0;  // after the inner loop, on the old grid
  double objective_after = 0.0;   // after both grid moves, same posterior
  double noise_variance = 0.0;
  double sparsity = 0.0;
  double angle_step = 0.0;  // accepted step, 0 when no move
  double delay_step = 0.0;
  int inner_runs = 0;
};

struct EmState {
  double noise_variance = 0.0;
  double sparsity = 0.0;
  Grid grid;
  int iteration = 0;
  std::vector<EmTraceEntry> trace;
  std::vector<std::pair<int, Grid>> snapshots;
  bool step_underflow = false;  // some block search ran out of step size
  bool diverged = false;        // some inner solve reported divergence
};

double update_noise(const CMatrix& y, const Dictionary& dictionary, const PosteriorEstimate& posterior);
double update_sparsity(const PosteriorEstimate& posterior);

double em_objective(const CMatrix& y, const Dictionary& dictionary, const PosteriorEstimate& posterior);

// Gradients of the objective with respect to every grid angle (length Q) or delay (length U).
RVector gradient_angles(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config,
                        const PilotSet& pilots, const PosteriorEstimate& posterior);
RVector gradient_delays(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config,
                        const PosteriorEstimate& posterior);
double gradient_angle(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config, const PilotSet& pilots,
                      const PosteriorEstimate& posterior, int q);
double gradient_delay(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config,
                      const PosteriorEstimate& posterior, int u);

struct AscentResult {
  Dictionary dictionary;  // rebuilt on the new grid (or the old one when nothing moved)
  double objective = 0.0;
  double step = 0.0;
  bool moved = false;
  bool underflow = false;
};

AscentResult backtracking_ascent(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config,
                                 const PilotSet& pilots, const PosteriorEstimate& posterior, GridBlock block,
                                 const EmOptions& options = {});

// Solves for the coefficients on a fixed dictionary with the given noise variance and sparsity.
using InnerSolver =
    std::function<PosteriorEstimate(const CMatrix& y, const Dictionary& dictionary, double noise_variance, double sparsity)>;

struct EmResult {
  PosteriorEstimate estimate;  // final solve on the final grid
  Dictionary dictionary;
  EmState state;
};

EmResult run_em(const CMatrix& y, const SystemConfig& config, const PilotSet& pilots, const Grid& initial_grid,
                const InnerSolver& solver, const EmOptions& options = {});

}  // namespace risloc
