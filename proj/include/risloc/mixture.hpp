#pragma once

#include <vector>

#include "risloc/types.hpp"

namespace risloc {

// Weighted complex Gaussian components. Messages produced by the row coupling share one
// variance across components; per-component variances are kept so that moment-matched
// groups can be represented before symmetrization.
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<cplx> means;
  std::vector<double> variances;
  double source_magnitude = 0.0;  // |r| of the pseudo-observation the mixture came from
  int source_index = 0;           // block index, breaks magnitude ties

  int size() const { return static_cast<int>(weights.size()); }
  double weight_sum() const;
};

struct RowPrior {
  double sparsity = 0.0;       // rho
  cplx gain_mean{0.0, 0.0};    // beta hat
  double gain_variance = 1.0;  // v^beta
  std::vector<double> phases;  // constellation S_0..S_{V-1}

  int order() const { return static_cast<int>(phases.size()); }
  void validate() const;
};

// Spike at zero with weight 1 - active_prob plus a mixture slab.
struct BernoulliMixture {
  double active_prob = 0.0;
  GaussianMixture slab;
};

struct MixtureProduct {
  GaussianMixture grouped;  // anchor-grouped, moment-matched, before symmetrization
  GaussianMixture reduced;  // rotationally symmetrized
  bool underflow = false;
};

struct ScalarPosterior {
  cplx mean{0.0, 0.0};
  double variance = 0.0;
  double active_prob = 0.0;
};

// log CN(0; d, v)
inline double log_cn0(cplx d, double v) { return -std::log(kPi * v) - std::norm(d) / v; }

GaussianMixture forward_message(cplx r, double vr, const RowPrior& prior, int source_index = 0);

MixtureProduct mixture_product_reduce(const GaussianMixture& a, const GaussianMixture& b,
                                      double variance_floor = 1e-12);

// Product of the given messages (any order; sorted internally by descending source
// magnitude, ties by index) reduced progressively, then combined with the prior.
BernoulliMixture backward_message_nu(const std::vector<GaussianMixture>& messages, const RowPrior& prior,
                                     double variance_floor = 1e-12);

// Bernoulli-Gaussian prior times an already reduced product; nullptr means an empty product.
BernoulliMixture combine_with_prior(const GaussianMixture* product, const RowPrior& prior,
                                    double variance_floor = 1e-12);

BernoulliMixture zeta_message(const BernoulliMixture& nu, const RowPrior& prior, double variance_floor = 1e-12);

ScalarPosterior zeta_posterior(cplx r, double vr, const BernoulliMixture& message);

}  // namespace risloc
