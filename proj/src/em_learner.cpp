#include "risloc/em_learner.hpp"

#include <algorithm>
#include <cmath>

namespace risloc {

namespace {

void check_posterior(const CMatrix& y, const Dictionary& dictionary, const PosteriorEstimate& post) {
  if (dictionary.block_count() != y.cols()) throw StructuralError("dictionary blocks do not match observation columns");
  if (post.mean.rows() != dictionary.columns() || post.mean.cols() != y.cols() || post.variance.rows() != post.mean.rows() ||
      post.variance.cols() != post.mean.cols())
    throw StructuralError("posterior does not match the dictionary");
}

// Per-column terms 2 Re{R^H d_i zeta_i} - 2 v_i Re{z_i^H d_i} summed over blocks.
RVector column_sensitivity(const CMatrix& y, const Dictionary& dictionary, const PosteriorEstimate& post,
                           const std::function<CMatrix(int)>& derivative) {
  RVector total = RVector::Zero(dictionary.columns());
  for (int m = 0; m < dictionary.block_count(); ++m) {
    const CMatrix& z = dictionary.blocks[static_cast<std::size_t>(m)].matrix;
    const CMatrix d = derivative(m);
    const CVector residual = y.col(m) - z * post.mean.col(m);
    const CVector c = d.adjoint() * residual;
    const RVector self = (z.conjugate().array() * d.array()).colwise().sum().real().transpose();
    for (Eigen::Index i = 0; i < total.size(); ++i)
      total[i] += 2.0 * (std::conj(c[i]) * post.mean(i, m)).real() - 2.0 * post.variance(i, m) * self[i];
  }
  return total;
}

bool grid_valid(const Grid& g) {
  if (!g.is_sorted()) return false;
  if (g.angles.front() <= -kPi / 2.0 || g.angles.back() >= kPi / 2.0) return false;
  return g.delays.front() >= 0.0;
}

double initial_noise(const CMatrix& y, double snr_db) {
  const double power = y.squaredNorm() / static_cast<double>(y.size());
  return std::max(power / (1.0 + std::pow(10.0, snr_db / 10.0)), 1e-15);
}

}  // namespace

double update_noise(const CMatrix& y, const Dictionary& dictionary, const PosteriorEstimate& posterior) {
  check_posterior(y, dictionary, posterior);
  double total = 0.0;
  for (int m = 0; m < dictionary.block_count(); ++m) {
    const BlockOperator& op = dictionary.blocks[static_cast<std::size_t>(m)];
    total += (y.col(m) - op.matrix * posterior.mean.col(m)).squaredNorm();
    // trace(Z V Z^H) with diagonal V
    total += (op.abs2 * posterior.variance.col(m)).sum();
  }
  return std::max(total / static_cast<double>(y.size()), 1e-15);
}

double update_sparsity(const PosteriorEstimate& posterior) {
  const double n = static_cast<double>(posterior.active_prob.size());
  if (n == 0.0) throw StructuralError("posterior carries no support probabilities");
  const double lo = 1.0 / n;
  return std::clamp(posterior.active_prob.mean(), lo, 1.0 - lo);
}

double em_objective(const CMatrix& y, const Dictionary& dictionary, const PosteriorEstimate& posterior) {
  check_posterior(y, dictionary, posterior);
  double g = 0.0;
  for (int m = 0; m < dictionary.block_count(); ++m) {
    const BlockOperator& op = dictionary.blocks[static_cast<std::size_t>(m)];
    const CVector fit = op.matrix * posterior.mean.col(m);
    g += 2.0 * y.col(m).dot(fit).real() - fit.squaredNorm() - (op.abs2 * posterior.variance.col(m)).sum();
  }
  return g;
}

RVector gradient_angles(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config,
                        const PilotSet& pilots, const PosteriorEstimate& posterior) {
  check_posterior(y, dictionary, posterior);
  const Grid& grid = dictionary.grid;
  const RVector per_column = column_sensitivity(
      y, dictionary, posterior, [&](int m) { return angle_derivative_columns(grid, config, pilots, m); });
  RVector out = RVector::Zero(grid.angle_count());
  for (int i = 0; i < grid.size(); ++i) out[grid.angle_index(i)] += per_column[i];
  return out;
}

RVector gradient_delays(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config,
                        const PosteriorEstimate& posterior) {
  check_posterior(y, dictionary, posterior);
  const Grid& grid = dictionary.grid;
  const RVector per_column = column_sensitivity(y, dictionary, posterior, [&](int m) {
    return delay_derivative_columns(grid, config, dictionary.blocks[static_cast<std::size_t>(m)].matrix);
  });
  RVector out = RVector::Zero(grid.delay_count());
  for (int i = 0; i < grid.size(); ++i) out[grid.delay_index(i)] += per_column[i];
  return out;
}

double gradient_angle(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config, const PilotSet& pilots,
                      const PosteriorEstimate& posterior, int q) {
  if (q < 0 || q >= dictionary.grid.angle_count()) throw InputError("angle index out of range");
  return gradient_angles(y, dictionary, config, pilots, posterior)[q];
}

double gradient_delay(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config,
                      const PosteriorEstimate& posterior, int u) {
  if (u < 0 || u >= dictionary.grid.delay_count()) throw InputError("delay index out of range");
  return gradient_delays(y, dictionary, config, posterior)[u];
}

AscentResult backtracking_ascent(const CMatrix& y, const Dictionary& dictionary, const SystemConfig& config,
                                 const PilotSet& pilots, const PosteriorEstimate& posterior, GridBlock block,
                                 const EmOptions& options) {
  AscentResult out;
  out.dictionary = dictionary;
  out.objective = em_objective(y, dictionary, posterior);

  const bool angles = block == GridBlock::angles;
  const RVector grad = angles ? gradient_angles(y, dictionary, config, pilots, posterior)
                              : gradient_delays(y, dictionary, config, posterior);
  const double peak = grad.cwiseAbs().maxCoeff();
  if (!(peak > 0.0) || !std::isfinite(peak)) return out;

  const std::vector<double>& values = angles ? dictionary.grid.angles : dictionary.grid.delays;
  const double spacing = (values.back() - values.front()) / static_cast<double>(values.size() - 1);
  const double first = options.initial_step * spacing / peak;
  const double smallest = options.min_step_ratio * first;

  for (double eps = first; eps >= smallest; eps /= 2.0) {
    Grid candidate = dictionary.grid;
    std::vector<double>& moved = angles ? candidate.angles : candidate.delays;
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += eps * grad[static_cast<Eigen::Index>(i)];
    if (!grid_valid(candidate)) continue;
    Dictionary trial = build_dictionary(candidate, config, pilots);
    const double g = em_objective(y, trial, posterior);
    if (g > out.objective) {
      out.dictionary = std::move(trial);
      out.objective = g;
      out.step = eps;
      out.moved = true;
      return out;
    }
  }
  out.underflow = true;
  return out;
}

EmResult run_em(const CMatrix& y, const SystemConfig& config, const PilotSet& pilots, const Grid& initial_grid,
                const InnerSolver& solver, const EmOptions& options) {
  if (options.max_outer < 1 || options.max_inner < 1) throw InputError("EM loop counts must be positive");
  EmResult res;
  EmState& st = res.state;
  st.grid = initial_grid;
  st.noise_variance = initial_noise(y, options.initial_snr_db);
  const double rows = static_cast<double>(initial_grid.size());
  st.sparsity = std::clamp(2.0 * std::max(1, options.device_guess) / rows, 1.0 / rows, 0.5);
  res.dictionary = build_dictionary(initial_grid, config, pilots);
  st.snapshots.emplace_back(0, st.grid);

  for (int l = 1; l <= options.max_outer; ++l) {
    EmTraceEntry entry;
    entry.iteration = l;
    for (int inner = 1; inner <= options.max_inner; ++inner) {
      res.estimate = solver(y, res.dictionary, st.noise_variance, st.sparsity);
      st.diverged = st.diverged || res.estimate.diverged;
      entry.inner_runs = inner;
      const double noise = update_noise(y, res.dictionary, res.estimate);
      st.sparsity = update_sparsity(res.estimate);
      const double change = std::abs(noise - st.noise_variance) / st.noise_variance;
      st.noise_variance = noise;
      if (change < options.inner_tolerance) break;
    }
    entry.noise_variance = st.noise_variance;
    entry.sparsity = st.sparsity;
    entry.objective_before = em_objective(y, res.dictionary, res.estimate);
    entry.objective_after = entry.objective_before;
    st.iteration = l;

    if (options.learn_grid) {
      AscentResult a = backtracking_ascent(y, res.dictionary, config, pilots, res.estimate, GridBlock::angles, options);
      AscentResult d = backtracking_ascent(y, a.dictionary, config, pilots, res.estimate, GridBlock::delays, options);
      st.step_underflow = st.step_underflow || a.underflow || d.underflow;
      entry.angle_step = a.step;
      entry.delay_step = d.step;
      entry.objective_after = d.objective;
      res.dictionary = std::move(d.dictionary);
      st.grid = res.dictionary.grid;
    }
    st.trace.push_back(entry);
    if (options.snapshot_every > 0 && l % options.snapshot_every == 0) st.snapshots.emplace_back(l, st.grid);

    const double scale = std::max(std::abs(entry.objective_before), 1e-300);
    if ((entry.objective_after - entry.objective_before) / scale < options.outer_tolerance) break;
  }

  // Final coefficients on the final grid.
  res.estimate = solver(y, res.dictionary, st.noise_variance, st.sparsity);
  st.diverged = st.diverged || res.estimate.diverged;
  if (st.snapshots.back().first != st.iteration) st.snapshots.emplace_back(st.iteration, st.grid);
  return res;
}

}  // namespace risloc
