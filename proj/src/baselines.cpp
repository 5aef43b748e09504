#include "risloc/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "risloc/mixture.hpp"

namespace risloc {

OmpResult omp_column(const CVector& y, const CMatrix& z, int target, double residual_tol) {
  if (z.rows() != y.size()) throw StructuralError("observation length does not match the operator");
  if (target > z.cols()) throw InputError("more atoms requested than columns available");
  const Eigen::Index n_cols = z.cols();
  const RVector norms = z.colwise().norm().transpose();

  OmpResult res;
  res.coefficients = CVector::Zero(n_cols);
  CVector residual = y;
  res.residual_norms.push_back(residual.norm());
  const int limit = target > 0 ? target : static_cast<int>(std::min(z.rows(), n_cols));
  std::vector<bool> used(static_cast<std::size_t>(n_cols), false);
  CVector coef;

  while (static_cast<int>(res.support.size()) < limit && res.residual_norms.back() > residual_tol) {
    const CVector corr = z.adjoint() * residual;
    Eigen::Index pick = -1;
    double best = -1.0;
    for (Eigen::Index i = 0; i < n_cols; ++i) {
      if (used[static_cast<std::size_t>(i)] || norms[i] <= 0.0) continue;
      const double score = std::abs(corr[i]) / norms[i];
      if (score > best) {
        best = score;
        pick = i;
      }
    }
    if (pick < 0) break;
    std::vector<int> trial = res.support;
    trial.push_back(static_cast<int>(pick));
    CMatrix sub(z.rows(), static_cast<Eigen::Index>(trial.size()));
    for (std::size_t k = 0; k < trial.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = z.col(trial[k]);
    Eigen::ColPivHouseholderQR<CMatrix> qr(sub);
    if (qr.rank() < sub.cols()) {
      res.rank_deficient = true;
      break;
    }
    coef = qr.solve(y);
    res.support = std::move(trial);
    used[static_cast<std::size_t>(pick)] = true;
    residual = y - sub * coef;
    res.residual_norms.push_back(residual.norm());
  }
  for (std::size_t k = 0; k < res.support.size(); ++k) res.coefficients[res.support[k]] = coef[static_cast<Eigen::Index>(k)];
  return res;
}

std::vector<int> OmpFrameResult::support() const {
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < selection_rate.size(); ++i)
    if (selection_rate[i] > 0.5) rows.push_back(static_cast<int>(i));
  return rows;
}

OmpFrameResult omp(const CMatrix& y, const Dictionary& dictionary, int target) {
  if (dictionary.block_count() != y.cols()) throw StructuralError("dictionary blocks do not match observation columns");
  OmpFrameResult out;
  out.coefficients = CMatrix::Zero(dictionary.columns(), y.cols());
  out.selection_rate = RVector::Zero(dictionary.columns());
  for (Eigen::Index m = 0; m < y.cols(); ++m) {
    const CVector ym = y.col(m);
    const double tol = target > 0 ? 0.0 : 1e-6 * ym.norm();
    const OmpResult r = omp_column(ym, dictionary.blocks[static_cast<std::size_t>(m)].matrix, target, tol);
    out.coefficients.col(m) = r.coefficients;
    out.rank_deficient = out.rank_deficient || r.rank_deficient;
    for (int i : r.support) out.selection_rate[i] += 1.0;
  }
  out.selection_rate /= static_cast<double>(y.cols());
  return out;
}

Denoiser make_bernoulli_gaussian_denoiser(const BgPrior& prior) {
  if (!(prior.sparsity > 0.0 && prior.sparsity < 1.0)) throw InputError("sparsity must lie in (0, 1)");
  if (!(prior.gain_variance > 0.0)) throw InputError("gain variance must be positive");
  BernoulliMixture message;
  message.active_prob = prior.sparsity;
  message.slab.weights = {1.0};
  message.slab.means = {prior.gain_mean};
  message.slab.variances = {prior.gain_variance};
  return [message](const CMatrix& r, const RMatrix& vr, DenoiserOutput& out) {
    out.mean.resize(r.rows(), r.cols());
    out.variance.resize(r.rows(), r.cols());
    out.active_prob.resize(r.rows(), r.cols());
    for (Eigen::Index m = 0; m < r.cols(); ++m)
      for (Eigen::Index i = 0; i < r.rows(); ++i) {
        const ScalarPosterior post = zeta_posterior(r(i, m), vr(i, m), message);
        out.mean(i, m) = post.mean;
        out.variance(i, m) = post.variance;
        out.active_prob(i, m) = post.active_prob;
      }
    out.row_prob = out.active_prob.rowwise().mean();
    out.row_belief.clear();
    return false;
  };
}

PosteriorEstimate bg_gamp_column(const CVector& y, const BlockOperator& z, const BgPrior& prior, double noise_variance,
                                 const SolverOptions& options) {
  const double s = std::sqrt(prior.gain_variance);
  BgPrior unit = prior;
  unit.gain_mean /= s;
  unit.gain_variance = 1.0;
  const CMatrix ys = y / s;
  PosteriorEstimate est = run_gamp(ys, {&z}, noise_variance / (s * s), unit.sparsity * unit.gain_variance,
                                   make_bernoulli_gaussian_denoiser(unit), options);
  scale_posterior(est, s);
  return est;
}

PosteriorEstimate bg_gamp(const CMatrix& y, const Dictionary& dictionary, const BgPrior& prior, double noise_variance,
                          const SolverOptions& options) {
  if (dictionary.block_count() != y.cols()) throw StructuralError("dictionary blocks do not match observation columns");
  const Eigen::Index n_cols = dictionary.columns();
  const Eigen::Index m_count = y.cols();
  PosteriorEstimate out;
  out.mean.resize(n_cols, m_count);
  out.variance.resize(n_cols, m_count);
  out.active_prob.resize(n_cols, m_count);
  out.converged = true;
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const PosteriorEstimate col =
        bg_gamp_column(y.col(m), dictionary.blocks[static_cast<std::size_t>(m)], prior, noise_variance, options);
    out.mean.col(m) = col.mean.col(0);
    out.variance.col(m) = col.variance.col(0);
    out.active_prob.col(m) = col.active_prob.col(0);
    out.iterations = std::max(out.iterations, col.iterations);
    out.converged = out.converged && col.converged;
    out.diverged = out.diverged || col.diverged;
    out.underflow = out.underflow || col.underflow;
    out.degenerate_column = out.degenerate_column || col.degenerate_column;
    if (out.residual_trace.size() < col.residual_trace.size()) out.residual_trace.resize(col.residual_trace.size(), 0.0);
    for (std::size_t k = 0; k < col.residual_trace.size(); ++k) out.residual_trace[k] += col.residual_trace[k];
  }
  out.row_prob = out.active_prob.rowwise().mean();
  return out;
}

}  // namespace risloc
