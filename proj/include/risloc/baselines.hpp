#pragma once

#include <vector>

#include "risloc/dictionary.hpp"
#include "risloc/mp_solver.hpp"
#include "risloc/types.hpp"

namespace risloc {

struct OmpResult {
  CVector coefficients;
  std::vector<int> support;             // selection order
  std::vector<double> residual_norms;   // ||y||, then after each accepted atom
  bool rank_deficient = false;
};

// Stops after `target` atoms, or when the residual norm drops below `residual_tol`.
// target <= 0 means no atom limit.
OmpResult omp_column(const CVector& y, const CMatrix& z, int target, double residual_tol = 0.0);

struct OmpFrameResult {
  CMatrix coefficients;  // Q*U x M
  RVector selection_rate;  // fraction of columns that picked each row
  bool rank_deficient = false;

  std::vector<int> support() const;  // rows picked in more than half of the columns
};

OmpFrameResult omp(const CMatrix& y, const Dictionary& dictionary, int target);

struct BgPrior {
  double sparsity = 0.0;
  cplx gain_mean{0.0, 0.0};
  double gain_variance = 1.0;
};

// Independent spike-plus-Gaussian denoiser per entry.
Denoiser make_bernoulli_gaussian_denoiser(const BgPrior& prior);

PosteriorEstimate bg_gamp_column(const CVector& y, const BlockOperator& z, const BgPrior& prior, double noise_variance,
                                 const SolverOptions& options = {});

// Columns are solved independently; row_prob is the mean entry probability across columns.
PosteriorEstimate bg_gamp(const CMatrix& y, const Dictionary& dictionary, const BgPrior& prior, double noise_variance,
                          const SolverOptions& options = {});

}  // namespace risloc
