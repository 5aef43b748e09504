#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "risloc/em_learner.hpp"
#include "risloc/experiment.hpp"

using namespace risloc;

namespace {

struct Fixture {
  SystemConfig config = oracle::small_config();
  Scene scene = generate_scene(config, 31);
  Grid grid = build_uniform_grid(config, 5, 4);
  Dictionary dict = build_dictionary(grid, config, scene.pilots);
};

double objective_on(const CMatrix& y, const Grid& g, const Fixture& f, const PosteriorEstimate& post) {
  return em_objective(y, build_dictionary(g, f.config, f.scene.pilots), post);
}

InnerSolver mp_solver(const SystemConfig& config, const Grid& grid) {
  return [config, grid](const CMatrix& y, const Dictionary& d, double noise, double sparsity) {
    RowPrior p = oracle_row_prior(config, grid);
    p.sparsity = sparsity;
    return run_mp(y, d, p, noise);
  };
}

}  // namespace

TEST_CASE("noise update matches the scalar expansion") {
  std::mt19937_64 rng(1);
  const Dictionary d = oracle::iid_dictionary(rng, 3, 2, 2);
  const CMatrix y = oracle::random_matrix(rng, 3, 2);
  const PosteriorEstimate post = oracle::random_posterior(rng, 2, 2);
  double total = 0.0;
  for (int m = 0; m < 2; ++m)
    for (int r = 0; r < 3; ++r) {
      cplx fit{};
      double spread = 0.0;
      for (int i = 0; i < 2; ++i) {
        const cplx zr = d.blocks[m].matrix(r, i);
        fit += zr * post.mean(i, m);
        spread += std::norm(zr) * post.variance(i, m);
      }
      total += std::norm(y(r, m) - fit) + spread;
    }
  CHECK(update_noise(y, d, post) == doctest::Approx(total / 6.0).epsilon(1e-13));

  PosteriorEstimate zero = post;
  zero.mean.setZero();
  zero.variance.setZero();
  CHECK(update_noise(y, d, zero) == doctest::Approx(y.squaredNorm() / 6.0).epsilon(1e-13));
  CMatrix y_exact(3, 2);
  for (int m = 0; m < 2; ++m) y_exact.col(m) = d.blocks[m].matrix * post.mean.col(m);
  PosteriorEstimate exact = post;
  exact.variance.setZero();
  CHECK(update_noise(y_exact, d, exact) == doctest::Approx(1e-15));
}

TEST_CASE("sparsity update is the mean support probability, clamped") {
  std::mt19937_64 rng(2);
  PosteriorEstimate p = oracle::random_posterior(rng, 10, 4);
  CHECK(update_sparsity(p) == doctest::Approx(p.active_prob.mean()).epsilon(1e-14));
  p.active_prob.setConstant(0.3);
  CHECK(update_sparsity(p) == doctest::Approx(0.3));
  p.active_prob.setZero();
  p.active_prob.row(2).setOnes();
  p.active_prob.row(7).setOnes();
  CHECK(update_sparsity(p) == doctest::Approx(2.0 / 10.0));
  p.active_prob.setZero();
  CHECK(update_sparsity(p) == doctest::Approx(1.0 / 40.0));
  p.active_prob.setOnes();
  CHECK(update_sparsity(p) == doctest::Approx(1.0 - 1.0 / 40.0));
}

TEST_CASE("objective special cases") {
  Fixture f;
  std::mt19937_64 rng(3);
  const CMatrix y = oracle::random_matrix(rng, f.config.observation_length(), f.config.n_blocks);
  PosteriorEstimate post = oracle::random_posterior(rng, f.grid.size(), f.config.n_blocks);
  PosteriorEstimate zero = post;
  zero.mean.setZero();
  zero.variance.setZero();
  CHECK(em_objective(y, f.dict, zero) == 0.0);

  post.variance.setZero();
  CMatrix fit(y.rows(), y.cols());
  for (int m = 0; m < f.config.n_blocks; ++m) fit.col(m) = f.dict.blocks[m].matrix * post.mean.col(m);
  CHECK(em_objective(fit, f.dict, post) == doctest::Approx(fit.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("analytic grid gradients match central differences") {
  Fixture f;
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(100 + seed));
    const CMatrix y = oracle::random_matrix(rng, f.config.observation_length(), f.config.n_blocks);
    const PosteriorEstimate post = oracle::random_posterior(rng, f.grid.size(), f.config.n_blocks);
    const RVector ga = gradient_angles(y, f.dict, f.config, f.scene.pilots, post);
    RVector fa(f.grid.angle_count());
    for (int q = 0; q < f.grid.angle_count(); ++q)
      fa[q] = oracle::central(
          std::function<double(double)>([&](double x) {
            Grid g = f.grid;
            g.angles[static_cast<std::size_t>(q)] = x;
            return objective_on(y, g, f, post);
          }),
          f.grid.angles[static_cast<std::size_t>(q)], 1e-7);
    CHECK(oracle::rel_error(ga, fa) < 1e-4);
    const RVector gd = gradient_delays(y, f.dict, f.config, post);
    RVector fd(f.grid.delay_count());
    for (int u = 0; u < f.grid.delay_count(); ++u)
      fd[u] = oracle::central(
          std::function<double(double)>([&](double x) {
            Grid g = f.grid;
            g.delays[static_cast<std::size_t>(u)] = x;
            return objective_on(y, g, f, post);
          }),
          f.grid.delays[static_cast<std::size_t>(u)], 1e-12);
    CHECK(oracle::rel_error(gd, fd) < 1e-4);
    CHECK(gradient_angle(y, f.dict, f.config, f.scene.pilots, post, 2) == ga[2]);
    CHECK(gradient_delay(y, f.dict, f.config, post, 1) == gd[1]);
  }
}

TEST_CASE("inactive grid points have zero gradient") {
  Fixture f;
  std::mt19937_64 rng(4);
  const CMatrix y = oracle::random_matrix(rng, f.config.observation_length(), f.config.n_blocks);
  PosteriorEstimate post = oracle::random_posterior(rng, f.grid.size(), f.config.n_blocks);
  const int q = 3;
  for (int u = 0; u < f.grid.delay_count(); ++u) {
    post.mean.row(f.grid.flat_index(q, u)).setZero();
    post.variance.row(f.grid.flat_index(q, u)).setZero();
  }
  CHECK(gradient_angles(y, f.dict, f.config, f.scene.pilots, post)[q] == 0.0);
}

TEST_CASE("objective falls when the grid leaves the truth and the gradient points back") {
  SystemConfig c = oracle::small_config();
  c.n_devices = 1;
  const Grid g = build_uniform_grid(c, 5, 4);
  const Scene s = generate_scene(c, 8, &g);
  const CMatrix y = noiseless_frame(s, c).observations;
  const int row = *s.devices[0].grid_row;
  const int q = g.angle_index(row);
  PosteriorEstimate post;
  post.mean = CMatrix::Zero(g.size(), c.n_blocks);
  post.variance = RMatrix::Zero(g.size(), c.n_blocks);
  post.mean.row(row) = s.gains(c).row(0);
  const Dictionary d = build_dictionary(g, c, s.pilots);
  const double g0 = em_objective(y, d, post);
  const double spacing = g.angles[1] - g.angles[0];
  for (double shift : {-0.2, -0.05, 0.05, 0.2}) {
    Grid moved = g;
    moved.angles[static_cast<std::size_t>(q)] += shift * spacing;
    const Dictionary dm = build_dictionary(moved, c, s.pilots);
    CHECK(em_objective(y, dm, post) < g0);
    const double grad = gradient_angles(y, dm, c, s.pilots, post)[q];
    CHECK(grad * shift < 0.0);  // ascent direction points back to the truth
  }
}

TEST_CASE("backtracking accepts only improving moves and keeps the grid sorted") {
  Fixture f;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const CMatrix y = oracle::random_matrix(rng, f.config.observation_length(), f.config.n_blocks);
    const PosteriorEstimate post = oracle::random_posterior(rng, f.grid.size(), f.config.n_blocks);
    const double before = em_objective(y, f.dict, post);
    for (GridBlock b : {GridBlock::angles, GridBlock::delays}) {
      const AscentResult r = backtracking_ascent(y, f.dict, f.config, f.scene.pilots, post, b);
      if (r.moved) {
        CHECK(r.objective > before);
        CHECK(r.objective == doctest::Approx(em_objective(y, r.dictionary, post)).epsilon(1e-12));
      } else {
        CHECK(r.objective == before);
      }
      CHECK(r.dictionary.grid.is_sorted());
      if (b == GridBlock::angles) CHECK(r.dictionary.grid.delays == f.grid.delays);
      if (b == GridBlock::delays) CHECK(r.dictionary.grid.angles == f.grid.angles);
    }
  }
  // zero gradient: nothing to do
  PosteriorEstimate zero;
  zero.mean = CMatrix::Zero(f.grid.size(), f.config.n_blocks);
  zero.variance = RMatrix::Zero(f.grid.size(), f.config.n_blocks);
  const CMatrix y = CMatrix::Ones(f.config.observation_length(), f.config.n_blocks);
  const AscentResult r = backtracking_ascent(y, f.dict, f.config, f.scene.pilots, zero, GridBlock::angles);
  CHECK_FALSE(r.moved);
  CHECK(r.dictionary.grid.angles == f.grid.angles);
}

TEST_CASE("EM on on-grid data leaves the grid in place and estimates the noise") {
  SystemConfig c = oracle::small_config();
  const Grid g = build_uniform_grid(c, 5, 4);
  const Scene s = generate_scene(c, 12, &g);
  const MeasurementFrame clean = noiseless_frame(s, c);
  const double noise = noise_variance_for_snr(clean, 12.0);
  const CMatrix y = add_noise(clean, noise, 5).observations;
  EmOptions opt;
  opt.max_outer = 20;
  const EmResult r = run_em(y, c, s.pilots, g, mp_solver(c, g), opt);
  // points carrying a device stay put; empty points may wander after noise
  const double da = (g.angles[1] - g.angles[0]) / 20.0;
  const double dt = (g.delays[1] - g.delays[0]) / 20.0;
  for (const auto& d : s.devices) {
    const auto q = static_cast<std::size_t>(g.angle_index(*d.grid_row));
    const auto u = static_cast<std::size_t>(g.delay_index(*d.grid_row));
    CHECK(std::abs(r.state.grid.angles[q] - g.angles[q]) < da);
    CHECK(std::abs(r.state.grid.delays[u] - g.delays[u]) < dt);
  }
  CHECK(r.state.grid.is_sorted());
  CHECK(r.state.noise_variance > noise / 2.0);
  CHECK(r.state.noise_variance < noise * 2.0);
  CHECK(r.state.sparsity > 0.0);
  CHECK(r.state.sparsity < 1.0);
  for (const auto& e : r.state.trace) CHECK(e.objective_after >= e.objective_before);
  REQUIRE_FALSE(r.state.snapshots.empty());
  CHECK(r.state.snapshots.front().first == 0);
}

TEST_CASE("EM pulls the grid onto a single off-grid device") {
  SystemConfig c = oracle::small_config();
  c.n_devices = 1;
  const Grid g = build_uniform_grid(c, 5, 4);
  Scene s = generate_scene(c, 4, &g);
  const double spacing = g.angles[1] - g.angles[0];
  s.devices[0].angle += 0.3 * spacing;
  const MeasurementFrame clean = noiseless_frame(s, c);
  const CMatrix y = add_noise(clean, noise_variance_for_snr(clean, 18.0), 9).observations;
  EmOptions opt;
  opt.device_guess = 1;
  const EmResult r = run_em(y, c, s.pilots, g, mp_solver(c, g), opt);
  double nearest = 1e9;
  for (double a : r.state.grid.angles) nearest = std::min(nearest, std::abs(a - s.devices[0].angle));
  CHECK(nearest < 0.03 * spacing);
  CHECK(r.state.iteration <= 70);
}

TEST_CASE("EM rejects empty loop counts") {
  Fixture f;
  EmOptions opt;
  opt.max_outer = 0;
  const CMatrix y = CMatrix::Ones(f.config.observation_length(), f.config.n_blocks);
  CHECK_THROWS_AS(run_em(y, f.config, f.scene.pilots, f.grid, mp_solver(f.config, f.grid), opt), InputError);
}
