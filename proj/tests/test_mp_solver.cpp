#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "risloc/baselines.hpp"
#include "risloc/mp_solver.hpp"

using namespace risloc;

namespace {

RowPrior make_prior(int order, double sparsity, double variance = 1.0, cplx mean = {}) {
  return RowPrior{sparsity, mean, variance, dpsk_constellation(order)};
}

struct Problem {
  Dictionary dict;
  CMatrix truth;
  CMatrix y;
  double noise = 0.0;
};

Problem make_problem(std::uint64_t seed, int rows, int cols, int blocks, int active, int order, double noise) {
  std::mt19937_64 rng(seed);
  Problem p;
  p.dict = oracle::iid_dictionary(rng, rows, cols, blocks);
  p.truth = oracle::sparse_rows(rng, cols, blocks, active, order);
  p.noise = noise;
  p.y = CMatrix(rows, blocks);
  for (int m = 0; m < blocks; ++m) p.y.col(m) = p.dict.blocks[static_cast<std::size_t>(m)].matrix * p.truth.col(m);
  for (int m = 0; m < blocks; ++m)
    for (int i = 0; i < rows; ++i) p.y(i, m) += complex_normal(rng, noise);
  return p;
}

}  // namespace

TEST_CASE("output and input linear steps follow the scalar-channel formulas") {
  std::mt19937_64 rng(1);
  const BlockOperator z = make_block_operator(oracle::random_matrix(rng, 3, 4));
  const CVector zeta = oracle::random_matrix(rng, 4, 1);
  const RVector vz = RVector::Constant(4, 0.3);
  const CVector a_prev = oracle::random_matrix(rng, 3, 1);
  const CVector y = oracle::random_matrix(rng, 3, 1);
  const OutputStep o = awgn_output_step(z, zeta, vz, a_prev, y, 0.2);
  for (int i = 0; i < 3; ++i) {
    double vp = 0.0;
    cplx p{};
    for (int j = 0; j < 4; ++j) {
      vp += std::norm(z.matrix(i, j)) * 0.3;
      p += z.matrix(i, j) * zeta[j];
    }
    p -= vp * a_prev[i];
    CHECK(o.vp[i] == doctest::Approx(vp));
    CHECK(std::abs(o.p[i] - p) < 1e-13);
    CHECK(std::abs(o.a[i] - (y[i] - p) / (vp + 0.2)) < 1e-13);
    CHECK(o.va[i] == doctest::Approx(1.0 / (vp + 0.2)));
  }
  const InputStep in = input_linear_step(z, o.a, o.va, zeta);
  for (int j = 0; j < 4; ++j) {
    double prec = 0.0;
    cplx back{};
    for (int i = 0; i < 3; ++i) {
      prec += std::norm(z.matrix(i, j)) * o.va[i];
      back += std::conj(z.matrix(i, j)) * o.a[i];
    }
    CHECK(in.vr[j] == doctest::Approx(1.0 / prec));
    CHECK(std::abs(in.r[j] - (zeta[j] + back / prec)) < 1e-12);
  }
  CHECK_THROWS_AS(awgn_output_step(z, zeta, vz, a_prev, y, 0.0), InputError);
}

TEST_CASE("row-coupled solver reduces to Bernoulli-Gaussian GAMP for one block and V = 1") {
  for (int seed = 0; seed < 20; ++seed) {
    const Problem p = make_problem(static_cast<std::uint64_t>(seed), 40, 60, 1, 4, 1, 1e-3);
    for (const cplx mean : {cplx{0.0, 0.0}, cplx{0.4, -0.2}}) {
      for (Schedule schedule : {Schedule::swept, Schedule::parallel}) {
        SolverOptions opt;
        opt.schedule = schedule;
        opt.max_iterations = 50;
        const RowPrior rp = make_prior(1, 4.0 / 60.0, 1.0, mean);
        const PosteriorEstimate a = run_mp(p.y, p.dict, rp, p.noise, opt);
        const BgPrior bp{rp.sparsity, mean * std::polar(1.0, rp.phases[0]), 1.0};
        const PosteriorEstimate b = bg_gamp(p.y, p.dict, bp, p.noise, opt);
        CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-8);
        CHECK((a.variance - b.variance).cwiseAbs().maxCoeff() < 1e-8);
        CHECK((a.active_prob - b.active_prob).cwiseAbs().maxCoeff() < 1e-8);
      }
    }
  }
}

TEST_CASE("row-coupled solver recovers row-sparse DPSK coefficients on an i.i.d. operator") {
  const Problem p = make_problem(42, 60, 120, 8, 5, 4, 1e-4);
  const PosteriorEstimate est = run_mp(p.y, p.dict, make_prior(4, 5.0 / 120.0), p.noise);
  const double nmse = (est.mean - p.truth).squaredNorm() / p.truth.squaredNorm();
  CHECK(nmse < 1e-3);
  std::vector<int> truth_rows;
  for (int i = 0; i < p.truth.rows(); ++i)
    if (p.truth.row(i).norm() > 0) truth_rows.push_back(i);
  CHECK(est.support() == truth_rows);
  CHECK(est.converged);
}

TEST_CASE("solver outputs respect probability and variance invariants; reruns are identical") {
  for (int seed = 0; seed < 100; ++seed) {
    const Problem p = make_problem(static_cast<std::uint64_t>(seed), 20, 30, 3, 2, 4, 1e-2);
    SolverOptions opt;
    opt.max_iterations = 15;
    const RowPrior rp = make_prior(4, 2.0 / 30.0);
    const PosteriorEstimate a = run_mp(p.y, p.dict, rp, p.noise, opt);
    const PosteriorEstimate b = run_mp(p.y, p.dict, rp, p.noise, opt);
    CHECK(a.active_prob.minCoeff() >= 0.0);
    CHECK(a.active_prob.maxCoeff() <= 1.0);
    CHECK(a.row_prob.minCoeff() >= 0.0);
    CHECK(a.row_prob.maxCoeff() <= 1.0);
    CHECK(a.variance.minCoeff() >= 0.0);
    CHECK(a.mean.allFinite());
    for (const auto& belief : a.row_belief) {
      CHECK(belief.slab.weight_sum() == doctest::Approx(1.0).epsilon(1e-9));
      for (double v : belief.slab.variances) CHECK(v >= opt.variance_floor * 0.999);
    }
    CHECK(a.mean == b.mean);
    CHECK(a.variance == b.variance);
    CHECK(a.iterations == b.iterations);
  }
}

TEST_CASE("posterior scaling and input validation") {
  const Problem p = make_problem(3, 10, 12, 2, 1, 4, 1e-2);
  SolverOptions opt;
  opt.max_iterations = 0;
  CHECK_THROWS_AS(run_mp(p.y, p.dict, make_prior(4, 0.1), p.noise, opt), InputError);
  CHECK_THROWS_AS(run_mp(p.y, p.dict, make_prior(4, 0.1), 0.0), InputError);
  CHECK_THROWS_AS(run_mp(p.y.leftCols(1), p.dict, make_prior(4, 0.1), p.noise), StructuralError);

  // the solver works in units of the prior spread: scaling data and prior together scales the answer
  const PosteriorEstimate a = run_mp(p.y, p.dict, make_prior(4, 0.1, 1.0), p.noise);
  const PosteriorEstimate b = run_mp(p.y * 1e3, p.dict, make_prior(4, 0.1, 1e6), p.noise * 1e6);
  CHECK((b.mean / 1e3 - a.mean).cwiseAbs().maxCoeff() < 1e-9);

  PosteriorEstimate s = a;
  scale_posterior(s, 2.0);
  CHECK((s.mean - 2.0 * a.mean).norm() == 0.0);
  CHECK((s.variance - 4.0 * a.variance).norm() == 0.0);
}
