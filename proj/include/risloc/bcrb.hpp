#pragma once

#include <vector>

#include "risloc/core_model.hpp"
#include "risloc/mixture.hpp"
#include "risloc/types.hpp"

namespace risloc {

// Real parameter layout: [angle_1..K, delay_1..K, then per device k and block m the pair
// (Re, Im) of its gain], i.e. gain coordinate 2K + 2(kM + m) (+1 for the imaginary part).
struct BimMatrix {
  RMatrix j;
  int devices = 0;
  int blocks = 0;

  int angle(int k) const { return k; }
  int delay(int k) const { return devices + k; }
  int gain_re(int k, int m) const { return 2 * devices + 2 * (k * blocks + m); }
  int gain_im(int k, int m) const { return gain_re(k, m) + 1; }
  int dimension() const { return 2 * devices + 2 * devices * blocks; }
};

// Data information (2 / sigma^2) Re{D^H D} evaluated at the true angles, delays and gains.
BimMatrix assemble_data_bim(const Scene& scene, const SystemConfig& config, double noise_variance);

// Uniform angle/delay priors contribute nothing; every gain carries the Fisher information of
// the gain prior (a phase mixture of circular Gaussians, 2/v per real coordinate when the
// mean gain is zero).
BimMatrix assemble_prior_bim(const RowPrior& prior, int devices, int blocks);

// 2x2 Fisher information of (Re, Im) under the phase-mixture gain prior.
RMatrix gain_prior_information(const RowPrior& prior);

struct BoundValues {
  RVector variances;
  double condition = 0.0;     // of the equilibrated matrix
  bool pseudo_inverse = false;
};

BoundValues bcrb_values(const RMatrix& j);

RVector distance_crb(const RVector& delay_variances);

struct BcrbSummary {
  RVector angle_variance;     // K
  RVector delay_variance;     // K
  RVector distance_variance;  // K
  RMatrix gain_variance;      // K x M, Var Re + Var Im
  double angle_nmse = 0.0;    // sum Var / sum angle^2
  double distance_nmse = 0.0;
  double gain_nmse = 0.0;          // per real coordinate: half of the complex figure
  double gain_nmse_complex = 0.0;  // sum (Var Re + Var Im) / sum |gain|^2
  double condition = 0.0;
  bool pseudo_inverse = false;
};

BcrbSummary evaluate_bcrb(const Scene& scene, const SystemConfig& config, double noise_variance, const RowPrior& prior);

}  // namespace risloc
