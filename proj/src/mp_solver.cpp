#include "risloc/mp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace risloc {

std::vector<int> PosteriorEstimate::support(double threshold) const {
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < row_prob.size(); ++i)
    if (row_prob[i] > threshold) rows.push_back(static_cast<int>(i));
  return rows;
}

OutputStep awgn_output_step(const BlockOperator& z, const CVector& zeta, const RVector& v_zeta, const CVector& a_prev,
                            const CVector& y, double noise_variance) {
  if (z.matrix.cols() != zeta.size() || z.matrix.rows() != y.size() || a_prev.size() != y.size())
    throw StructuralError("output step operands disagree in shape");
  if (!(noise_variance > 0.0)) throw InputError("noise variance must be positive");
  OutputStep s;
  s.vp = z.abs2 * v_zeta;
  s.p = z.matrix * zeta - (s.vp.array() * a_prev.array()).matrix();
  const RVector denom = s.vp.array() + noise_variance;
  s.q = ((s.vp.array() * y.array() + noise_variance * s.p.array()) / denom.array()).matrix();
  s.vq = (s.vp.array() * noise_variance / denom.array()).matrix();
  s.a = ((y - s.p).array() / denom.array()).matrix();
  s.va = denom.cwiseInverse();
  return s;
}

InputStep input_linear_step(const BlockOperator& z, const CVector& a, const RVector& va, const CVector& zeta,
                            double variance_ceiling) {
  if (z.matrix.rows() != a.size() || z.matrix.cols() != zeta.size()) throw StructuralError("input step operands disagree in shape");
  InputStep s;
  const RVector precision = z.abs2.transpose() * va;
  s.vr.resize(precision.size());
  for (Eigen::Index i = 0; i < precision.size(); ++i) {
    if (precision[i] > 0.0) {
      s.vr[i] = std::min(1.0 / precision[i], variance_ceiling);
    } else {
      s.vr[i] = variance_ceiling;
      s.degenerate = true;
    }
  }
  s.r = zeta + (s.vr.array() * (z.matrix.adjoint() * a).array()).matrix();
  return s;
}

namespace {

struct Snapshot {
  CMatrix mean;
  RMatrix variance;
  RMatrix active_prob;
  RVector row_prob;
  std::vector<BernoulliMixture> row_belief;
};

bool uniform_psk(const std::vector<double>& phases) {
  const int v = static_cast<int>(phases.size());
  for (int l = 1; l < v; ++l)
    if (std::abs(wrap_phase(phases[static_cast<std::size_t>(l)] - phases[0] - 2.0 * kPi * l / v)) > 1e-12) return false;
  return true;
}

// Forward messages of a uniform PSK constellation are fully described by their first
// component; products and reductions then stay in that form.
struct PskMessage {
  cplx mean;
  double variance;
};

PskMessage psk_reduce(const PskMessage& anchor, const PskMessage& other, int order, const std::vector<cplx>& turns,
                      double floor) {
  const double vx = std::max(anchor.variance, floor);
  const double vw = std::max(other.variance, floor);
  const double v = 1.0 / (1.0 / vx + 1.0 / vw);
  const double vs = vx + vw;
  double lw[64];
  cplx mu[64];
  double mx = -std::numeric_limits<double>::infinity();
  for (int q = 0; q < order; ++q) {
    const cplx wq = turns[static_cast<std::size_t>(q)] * other.mean;
    mu[q] = v * (anchor.mean / vx + wq / vw);
    lw[q] = -std::norm(anchor.mean - wq) / vs;
    mx = std::max(mx, lw[q]);
  }
  double total = 0.0;
  for (int q = 0; q < order; ++q) total += (lw[q] = std::exp(lw[q] - mx));
  cplx mean{};
  for (int q = 0; q < order; ++q) mean += (lw[q] / total) * mu[q];
  double spread = 0.0;
  for (int q = 0; q < order; ++q) spread += (lw[q] / total) * std::norm(mu[q] - mean);
  return {mean, std::max(v + spread, floor)};
}

GaussianMixture expand(const PskMessage& msg, int order, const std::vector<cplx>& turns) {
  GaussianMixture g;
  g.weights.assign(static_cast<std::size_t>(order), 1.0 / order);
  g.variances.assign(static_cast<std::size_t>(order), msg.variance);
  g.means.resize(static_cast<std::size_t>(order));
  for (int l = 0; l < order; ++l) g.means[static_cast<std::size_t>(l)] = turns[static_cast<std::size_t>(l)] * msg.mean;
  return g;
}

}  // namespace

Denoiser make_row_coupled_denoiser(const RowPrior& prior, double variance_floor) {
  prior.validate();
  if (prior.order() > 64) throw InputError("constellation order above 64 is not supported");
  return [prior, variance_floor](const CMatrix& r, const RMatrix& vr, DenoiserOutput& out) {
    const Eigen::Index rows = r.rows();
    const int m_count = static_cast<int>(r.cols());
    const int order = prior.order();
    out.mean.resize(rows, m_count);
    out.variance.resize(rows, m_count);
    out.active_prob.resize(rows, m_count);
    out.row_prob.resize(rows);
    out.row_belief.resize(static_cast<std::size_t>(rows));
    bool underflow = false;

    const bool fast = uniform_psk(prior.phases);
    std::vector<cplx> turns(static_cast<std::size_t>(order));
    for (int l = 0; l < order; ++l) turns[static_cast<std::size_t>(l)] = std::polar(1.0, -2.0 * kPi * l / order);
    const cplx first_turn = std::polar(1.0, -prior.phases[0]);

    std::vector<int> order_idx(static_cast<std::size_t>(m_count));
    std::vector<PskMessage> fwd(static_cast<std::size_t>(m_count));
    std::vector<PskMessage> prefix(static_cast<std::size_t>(m_count + 1));
    std::vector<GaussianMixture> general(static_cast<std::size_t>(m_count));

    for (Eigen::Index i = 0; i < rows; ++i) {
      std::iota(order_idx.begin(), order_idx.end(), 0);
      std::stable_sort(order_idx.begin(), order_idx.end(), [&](int a, int b) {
        const double ma = std::abs(r(i, a));
        const double mb = std::abs(r(i, b));
        if (ma != mb) return ma > mb;
        return a < b;
      });

      if (fast) {
        for (int m = 0; m < m_count; ++m) fwd[static_cast<std::size_t>(m)] = {first_turn * r(i, m), vr(i, m)};
        prefix[1] = fwd[static_cast<std::size_t>(order_idx[0])];
        for (int k = 1; k < m_count; ++k)
          prefix[static_cast<std::size_t>(k + 1)] =
              psk_reduce(prefix[static_cast<std::size_t>(k)], fwd[static_cast<std::size_t>(order_idx[static_cast<std::size_t>(k)])], order, turns, variance_floor);
        const GaussianMixture full = expand(prefix[static_cast<std::size_t>(m_count)], order, turns);
        out.row_belief[static_cast<std::size_t>(i)] = combine_with_prior(&full, prior, variance_floor);

        for (int k = 0; k < m_count; ++k) {
          const int m = order_idx[static_cast<std::size_t>(k)];
          BernoulliMixture nu;
          if (m_count == 1) {
            nu = combine_with_prior(nullptr, prior, variance_floor);
          } else {
            PskMessage acc;
            int next;
            if (k == 0) {
              acc = fwd[static_cast<std::size_t>(order_idx[1])];
              next = 2;
            } else {
              acc = prefix[static_cast<std::size_t>(k)];
              next = k + 1;
            }
            for (int t = next; t < m_count; ++t)
              acc = psk_reduce(acc, fwd[static_cast<std::size_t>(order_idx[static_cast<std::size_t>(t)])], order, turns, variance_floor);
            const GaussianMixture prod = expand(acc, order, turns);
            nu = combine_with_prior(&prod, prior, variance_floor);
          }
          const BernoulliMixture msg = zeta_message(nu, prior, variance_floor);
          const ScalarPosterior post = zeta_posterior(r(i, m), vr(i, m), msg);
          out.mean(i, m) = post.mean;
          out.variance(i, m) = post.variance;
          out.active_prob(i, m) = post.active_prob;
        }
      } else {
        for (int m = 0; m < m_count; ++m) general[static_cast<std::size_t>(m)] = forward_message(r(i, m), vr(i, m), prior, m);
        out.row_belief[static_cast<std::size_t>(i)] = backward_message_nu(general, prior, variance_floor);
        std::vector<GaussianMixture> others;
        for (int m = 0; m < m_count; ++m) {
          others.clear();
          for (int t = 0; t < m_count; ++t)
            if (t != m) others.push_back(general[static_cast<std::size_t>(t)]);
          const BernoulliMixture nu = backward_message_nu(others, prior, variance_floor);
          const BernoulliMixture msg = zeta_message(nu, prior, variance_floor);
          const ScalarPosterior post = zeta_posterior(r(i, m), vr(i, m), msg);
          out.mean(i, m) = post.mean;
          out.variance(i, m) = post.variance;
          out.active_prob(i, m) = post.active_prob;
        }
      }
      out.row_prob[i] = out.row_belief[static_cast<std::size_t>(i)].active_prob;
      if (!std::isfinite(out.row_prob[i])) underflow = true;
    }
    return underflow;
  };
}

namespace {

// Stopping rule, damping back-off and best-state bookkeeping shared by both schedules.
class Monitor {
 public:
  enum class Verdict { proceed, converged, restart, diverged };

  Monitor(const SolverOptions& options, double noise_target, double data_power)
      : opt_(options),
        target_(noise_target),
        start_(std::max(data_power, noise_target)),
        theta_(std::clamp(options.damping, options.min_damping, 1.0)) {}

  double theta() const { return theta_; }

  double noise(int it) const {
    if (!(opt_.noise_annealing > 0.0 && opt_.noise_annealing < 1.0)) return target_;
    return std::max(target_, start_ * std::pow(opt_.noise_annealing, it - 1));
  }

  bool improves(double residual) {
    if (!(residual < best_residual_)) return false;
    best_residual_ = residual;
    return true;
  }

  Verdict judge(int it, double residual, double change, double base) {
    const bool annealing = noise(it) > target_;
    if (!annealing && ((base > 0.0 && change / base < opt_.tolerance) || (base == 0.0 && change == 0.0)))
      return Verdict::converged;
    const bool blown = !std::isfinite(residual) || residual > opt_.blowup_factor * best_residual_;
    rising_ = residual > previous_ ? rising_ + 1 : 0;
    previous_ = residual;
    if (!blown && rising_ < opt_.divergence_window) return Verdict::proceed;
    rising_ = 0;
    previous_ = std::numeric_limits<double>::infinity();
    if (theta_ > opt_.min_damping) {
      theta_ = std::max(theta_ / 2.0, opt_.min_damping);
      return blown ? Verdict::restart : Verdict::proceed;
    }
    return Verdict::diverged;
  }

 private:
  const SolverOptions& opt_;
  double target_;
  double start_;
  double theta_;
  double best_residual_ = std::numeric_limits<double>::infinity();
  double previous_ = std::numeric_limits<double>::infinity();
  int rising_ = 0;
};

double mean_power(const CMatrix& y) { return y.squaredNorm() / static_cast<double>(y.size()); }

PosteriorEstimate run_parallel(const CMatrix& y, const std::vector<const BlockOperator*>& blocks, double noise_target,
                               double initial_variance, const Denoiser& denoiser, const SolverOptions& options) {
  const int m_count = static_cast<int>(y.cols());
  const Eigen::Index n_rows = y.rows();
  const Eigen::Index n_cols = blocks.front()->matrix.cols();
  const double floor = options.variance_floor;
  CMatrix zeta = CMatrix::Zero(n_cols, m_count);
  RMatrix vz = RMatrix::Constant(n_cols, m_count, std::max(initial_variance, floor));
  CMatrix a = CMatrix::Zero(n_rows, m_count);
  CMatrix r(n_cols, m_count);
  RMatrix vr(n_cols, m_count);

  PosteriorEstimate est;
  DenoiserOutput den;
  den.active_prob = RMatrix::Zero(n_cols, m_count);
  den.row_prob = RVector::Zero(n_cols);
  Snapshot best{zeta, vz, den.active_prob, den.row_prob, {}};
  Monitor monitor(options, noise_target, mean_power(y));

  for (int it = 1; it <= options.max_iterations; ++it) {
    const double noise = monitor.noise(it);
    const double theta = monitor.theta();
    double residual = 0.0;
    for (int m = 0; m < m_count; ++m) {
      const BlockOperator& op = *blocks[static_cast<std::size_t>(m)];
      const CVector a_prev = a.col(m);
      const OutputStep out = awgn_output_step(op, zeta.col(m), vz.col(m), a_prev, y.col(m), noise);
      residual += (y.col(m) - out.p - (out.vp.array() * a_prev.array()).matrix()).squaredNorm();
      const CVector a_new = theta * out.a + (1.0 - theta) * a_prev;
      const InputStep in = input_linear_step(op, a_new, out.va, zeta.col(m), options.variance_ceiling);
      a.col(m) = a_new;
      r.col(m) = in.r;
      vr.col(m) = in.vr;
      est.degenerate_column = est.degenerate_column || in.degenerate;
    }
    est.residual_trace.push_back(residual);
    if (monitor.improves(residual)) best = {zeta, vz, den.active_prob, den.row_prob, den.row_belief};

    if (denoiser(r, vr, den)) est.underflow = true;
    const CMatrix next = theta * den.mean + (1.0 - theta) * zeta;
    const double change = (next - zeta).norm();
    const double base = zeta.norm();
    zeta = next;
    if (options.damp_variances)
      vz = (theta * den.variance + (1.0 - theta) * vz).cwiseMax(floor);
    else
      vz = den.variance.cwiseMax(floor);
    est.iterations = it;

    const Monitor::Verdict verdict = monitor.judge(it, residual, change, base);
    if (verdict == Monitor::Verdict::converged) {
      est.converged = true;
      break;
    }
    if (verdict == Monitor::Verdict::restart || verdict == Monitor::Verdict::diverged) {
      zeta = best.mean;
      vz = best.variance;
      den.active_prob = best.active_prob;
      den.row_prob = best.row_prob;
      den.row_belief = best.row_belief;
      a.setZero();
      if (verdict == Monitor::Verdict::diverged) {
        est.diverged = true;
        break;
      }
    }
  }

  est.mean = std::move(zeta);
  est.variance = std::move(vz);
  est.active_prob = std::move(den.active_prob);
  est.row_prob = std::move(den.row_prob);
  est.row_belief = std::move(den.row_belief);
  return est;
}

PosteriorEstimate run_swept(const CMatrix& y, const std::vector<const BlockOperator*>& blocks, double noise_target,
                            double initial_variance, const Denoiser& denoiser, const SolverOptions& options) {
  const int m_count = static_cast<int>(y.cols());
  const Eigen::Index n_rows = y.rows();
  const Eigen::Index n_cols = blocks.front()->matrix.cols();
  const double floor = options.variance_floor;

  CMatrix zeta = CMatrix::Zero(n_cols, m_count);
  RMatrix vz = RMatrix::Constant(n_cols, m_count, std::max(initial_variance, floor));
  RMatrix active = RMatrix::Zero(n_cols, m_count);
  RVector row_prob = RVector::Zero(n_cols);
  std::vector<BernoulliMixture> row_belief(static_cast<std::size_t>(n_cols));
  CMatrix g = CMatrix::Zero(n_rows, m_count);  // scaled residual
  CMatrix omega(n_rows, m_count);
  RMatrix vp(n_rows, m_count);

  PosteriorEstimate est;
  Snapshot best{zeta, vz, active, row_prob, row_belief};
  Monitor monitor(options, noise_target, mean_power(y));

  CMatrix r_row(1, m_count);
  RMatrix vr_row(1, m_count);
  DenoiserOutput den;

  for (int it = 1; it <= options.max_iterations; ++it) {
    const double noise = monitor.noise(it);
    const double theta = monitor.theta();
    double residual = 0.0;
    for (int m = 0; m < m_count; ++m) {
      const BlockOperator& op = *blocks[static_cast<std::size_t>(m)];
      const CVector z_zeta = op.matrix * zeta.col(m);
      residual += (y.col(m) - z_zeta).squaredNorm();
      vp.col(m) = op.abs2 * vz.col(m);
      omega.col(m) = z_zeta - (vp.col(m).array() * g.col(m).array()).matrix();
      g.col(m) = ((y.col(m) - omega.col(m)).array() / (vp.col(m).array() + noise)).matrix();
    }
    est.residual_trace.push_back(residual);
    if (monitor.improves(residual)) best = {zeta, vz, active, row_prob, row_belief};

    const CMatrix previous = zeta;
    for (Eigen::Index i = 0; i < n_cols; ++i) {
      for (int m = 0; m < m_count; ++m) {
        const BlockOperator& op = *blocks[static_cast<std::size_t>(m)];
        const double precision = (op.abs2.col(i).array() / (vp.col(m).array() + noise)).sum();
        double v;
        if (precision > 0.0) {
          v = std::min(1.0 / precision, options.variance_ceiling);
        } else {
          v = options.variance_ceiling;
          est.degenerate_column = true;
        }
        vr_row(0, m) = v;
        r_row(0, m) = zeta(i, m) + v * op.matrix.col(i).dot(g.col(m));
      }
      if (denoiser(r_row, vr_row, den)) est.underflow = true;
      for (int m = 0; m < m_count; ++m) {
        const BlockOperator& op = *blocks[static_cast<std::size_t>(m)];
        const cplx a_new = theta * den.mean(0, m) + (1.0 - theta) * zeta(i, m);
        const double v_new = std::max(options.damp_variances ? theta * den.variance(0, m) + (1.0 - theta) * vz(i, m)
                                                              : den.variance(0, m),
                                      floor);
        const cplx da = a_new - zeta(i, m);
        const double dv = v_new - vz(i, m);
        zeta(i, m) = a_new;
        vz(i, m) = v_new;
        active(i, m) = den.active_prob(0, m);
        if (da == cplx{} && dv == 0.0) continue;
        auto om = omega.col(m);
        auto vpm = vp.col(m);
        auto gm = g.col(m);
        for (Eigen::Index j = 0; j < n_rows; ++j) {
          const double dvp = op.abs2(j, i) * dv;
          om[j] += op.matrix(j, i) * da - gm[j] * dvp;
          vpm[j] += dvp;
          gm[j] = (y(j, m) - om[j]) / (vpm[j] + noise);
        }
      }
      row_prob[i] = den.row_prob[0];
      if (!den.row_belief.empty()) row_belief[static_cast<std::size_t>(i)] = den.row_belief.front();
    }
    est.iterations = it;

    const Monitor::Verdict verdict = monitor.judge(it, residual, (zeta - previous).norm(), previous.norm());
    if (verdict == Monitor::Verdict::converged) {
      est.converged = true;
      break;
    }
    if (verdict == Monitor::Verdict::restart || verdict == Monitor::Verdict::diverged) {
      zeta = best.mean;
      vz = best.variance;
      active = best.active_prob;
      row_prob = best.row_prob;
      row_belief = best.row_belief;
      g.setZero();
      if (verdict == Monitor::Verdict::diverged) {
        est.diverged = true;
        break;
      }
    }
  }

  est.mean = std::move(zeta);
  est.variance = std::move(vz);
  est.active_prob = std::move(active);
  est.row_prob = std::move(row_prob);
  if (!row_belief.empty() && row_belief.front().slab.size() > 0) est.row_belief = std::move(row_belief);
  return est;
}

}  // namespace

PosteriorEstimate run_gamp(const CMatrix& y, const std::vector<const BlockOperator*>& blocks, double noise_variance,
                           double initial_variance, const Denoiser& denoiser, const SolverOptions& options) {
  const int m_count = static_cast<int>(y.cols());
  if (static_cast<int>(blocks.size()) != m_count) throw StructuralError("one operator per observation column is required");
  if (m_count == 0) throw StructuralError("no observations");
  for (const auto* b : blocks)
    if (b->matrix.rows() != y.rows() || b->matrix.cols() != blocks.front()->matrix.cols())
      throw StructuralError("operators disagree in shape with the observations");
  if (!(noise_variance > 0.0)) throw InputError("noise variance must be positive");
  if (options.max_iterations < 1) throw InputError("at least one iteration is required");
  if (options.schedule == Schedule::parallel)
    return run_parallel(y, blocks, noise_variance, initial_variance, denoiser, options);
  return run_swept(y, blocks, noise_variance, initial_variance, denoiser, options);
}

void scale_posterior(PosteriorEstimate& estimate, double s) {
  const double s2 = s * s;
  estimate.mean *= s;
  estimate.variance *= s2;
  for (auto& b : estimate.row_belief) {
    for (auto& m : b.slab.means) m *= s;
    for (auto& v : b.slab.variances) v *= s2;
  }
  for (double& r : estimate.residual_trace) r *= s2;
}

PosteriorEstimate run_mp(const CMatrix& y, const Dictionary& dictionary, const RowPrior& prior, double noise_variance,
                         const SolverOptions& options) {
  prior.validate();
  if (dictionary.block_count() != y.cols()) throw StructuralError("dictionary blocks do not match observation columns");
  // Solve in units of the prior gain spread so the absolute floors are scale free.
  const double s = std::sqrt(prior.gain_variance);
  RowPrior unit = prior;
  unit.gain_mean /= s;
  unit.gain_variance = 1.0;
  std::vector<const BlockOperator*> ops;
  for (const auto& b : dictionary.blocks) ops.push_back(&b);
  PosteriorEstimate est = run_gamp(y / s, ops, noise_variance / (s * s), unit.sparsity * unit.gain_variance,
                                   make_row_coupled_denoiser(unit, options.variance_floor), options);
  scale_posterior(est, s);
  return est;
}

}  // namespace risloc
