#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "risloc/bcrb.hpp"
#include "risloc/dictionary.hpp"
#include "risloc/experiment.hpp"

using namespace risloc;

namespace {

struct Fixture {
  SystemConfig config = oracle::small_config();
  Scene scene = generate_scene(config, 17);
  double noise = 0.5;
  RowPrior prior = RowPrior{0.1, 0.0, 2.0, dpsk_constellation(4)};
};

double min_eigen(const RMatrix& j) { return Eigen::SelfAdjointEigenSolver<RMatrix>(j).eigenvalues().minCoeff(); }

}  // namespace

TEST_CASE("data information entries match direct computation") {
  Fixture f;
  f.scene = generate_scene(f.config, 17);
  const BimMatrix bim = assemble_data_bim(f.scene, f.config, f.noise);
  const CMatrix alpha = f.scene.gains(f.config);
  const int K = f.config.n_devices, M = f.config.n_blocks;
  REQUIRE(bim.j.rows() == 2 * K + 2 * K * M);

  // derivative of the stacked mean with respect to one real parameter
  auto column = [&](int index) {
    CVector d = CVector::Zero(f.config.observation_length() * M);
    for (int k = 0; k < K; ++k) {
      const auto& dev = f.scene.devices[static_cast<std::size_t>(k)];
      for (int m = 0; m < M; ++m) {
        auto seg = d.segment(static_cast<Eigen::Index>(m) * f.config.observation_length(), f.config.observation_length());
        if (index == bim.angle(k)) {
          seg += oracle::central(std::function<CVector(double)>([&](double x) {
                                   return CVector(alpha(k, m) * atom(x, dev.delay, f.config, f.scene.pilots, m));
                                 }),
                                 dev.angle, 1e-7);
        } else if (index == bim.delay(k)) {
          seg += oracle::central(std::function<CVector(double)>([&](double x) {
                                   return CVector(alpha(k, m) * atom(dev.angle, x, f.config, f.scene.pilots, m));
                                 }),
                                 dev.delay, 1e-12);
        } else if (index == bim.gain_re(k, m)) {
          seg += atom(dev.angle, dev.delay, f.config, f.scene.pilots, m);
        } else if (index == bim.gain_im(k, m)) {
          seg += cplx{0, 1} * atom(dev.angle, dev.delay, f.config, f.scene.pilots, m);
        }
      }
    }
    return d;
  };
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(bim.j.rows()) - 1);
  for (int t = 0; t < 30; ++t) {
    const int a = t < 4 ? t : pick(rng);
    const int b = t < 4 ? (t + 1) % 4 : pick(rng);
    const double want = 2.0 / f.noise * column(a).dot(column(b)).real();
    CHECK(std::abs(bim.j(a, b) - want) <= 1e-5 * std::sqrt(std::abs(bim.j(a, a) * bim.j(b, b))));
  }
  CHECK((bim.j - bim.j.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("data information scales with the inverse noise variance") {
  Fixture f;
  const RMatrix a = assemble_data_bim(f.scene, f.config, f.noise).j;
  const RMatrix b = assemble_data_bim(f.scene, f.config, 3.0 * f.noise).j;
  CHECK(oracle::rel_error(CMatrix((3.0 * b).cast<cplx>()), CMatrix(a.cast<cplx>())) < 1e-13);
  CHECK_THROWS_AS(assemble_data_bim(f.scene, f.config, 0.0), InputError);
}

TEST_CASE("a single antenna pair carries no angle information") {
  SystemConfig c = oracle::small_config();
  c.n_tx = 1;
  c.n_rx = 1;
  c.n_blocks = 1;
  c.n_devices = 1;
  const Scene s = generate_scene(c, 2);
  const BimMatrix bim = assemble_data_bim(s, c, 1.0);
  CHECK(bim.j.row(bim.angle(0)).cwiseAbs().maxCoeff() < 1e-20);
  CHECK(bim.j(bim.delay(0), bim.delay(0)) > 0.0);
}

TEST_CASE("prior information of the gains") {
  RowPrior p{0.1, 0.0, 2.0, dpsk_constellation(4)};
  const RMatrix g = gain_prior_information(p);
  CHECK(g(0, 0) == 1.0);
  CHECK(g(1, 1) == 1.0);
  CHECK(g(0, 1) == 0.0);
  const BimMatrix bim = assemble_prior_bim(p, 2, 3);
  CHECK(bim.j.topLeftCorner(4, 4).cwiseAbs().maxCoeff() == 0.0);
  for (int k = 0; k < 2; ++k)
    for (int m = 0; m < 3; ++m) {
      CHECK(bim.j(bim.gain_re(k, m), bim.gain_re(k, m)) == doctest::Approx(2.0 / p.gain_variance));
      CHECK(bim.j(bim.gain_im(k, m), bim.gain_im(k, m)) == doctest::Approx(2.0 / p.gain_variance));
    }
  // A single shifted Gaussian has Fisher information 2/v per coordinate regardless of its mean.
  RowPrior shifted{0.1, cplx{0.8, 0.3}, 0.5, {0.0}};
  const RMatrix q = gain_prior_information(shifted);
  CHECK(q(0, 0) == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(q(1, 1) == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(std::abs(q(0, 1)) < 1e-6);
  // Phase mixtures are less informative than a single component.
  RowPrior mix{0.1, cplx{1.0, 0.0}, 0.5, dpsk_constellation(4)};
  const RMatrix r = gain_prior_information(mix);
  CHECK(r(0, 0) < 4.0);
  CHECK(r(0, 0) > 0.0);
  CHECK(r(0, 0) == doctest::Approx(r(1, 1)).epsilon(1e-6));
  // noninformative limit
  RowPrior wide{0.1, 0.0, 1e12, dpsk_constellation(4)};
  CHECK(gain_prior_information(wide).norm() < 1e-11);
}

TEST_CASE("bound extraction") {
  RMatrix d = RMatrix::Zero(3, 3);
  d.diagonal() << 2.0, 5.0, 0.25;
  const BoundValues b = bcrb_values(d);
  CHECK(b.variances[0] == doctest::Approx(0.5));
  CHECK(b.variances[1] == doctest::Approx(0.2));
  CHECK(b.variances[2] == doctest::Approx(4.0));
  CHECK_FALSE(b.pseudo_inverse);

  RMatrix singular = RMatrix::Zero(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0;
  const BoundValues s = bcrb_values(singular);
  CHECK(s.pseudo_inverse);
  CHECK(std::isinf(s.condition));
  CHECK_THROWS_AS(bcrb_values(RMatrix(2, 3)), StructuralError);

  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const CMatrix a = oracle::random_matrix(rng, 8, 5);
    const RMatrix j = (a.adjoint() * a).real();
    const RMatrix inv = j.inverse();
    const BoundValues v = bcrb_values(j);
    for (int i = 0; i < 5; ++i) CHECK(v.variances[i] == doctest::Approx(inv(i, i)).epsilon(1e-9));
  }
}

TEST_CASE("adding prior information never increases a bound") {
  Fixture f;
  const BimMatrix data = assemble_data_bim(f.scene, f.config, f.noise);
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const CMatrix a = oracle::random_matrix(rng, 3, static_cast<int>(data.j.rows()));
    const RMatrix extra = (a.adjoint() * a).real();
    const RVector base = bcrb_values(data.j + assemble_prior_bim(f.prior, data.devices, data.blocks).j).variances;
    const RVector more = bcrb_values(data.j + assemble_prior_bim(f.prior, data.devices, data.blocks).j + extra).variances;
    for (Eigen::Index i = 0; i < base.size(); ++i) CHECK(more[i] <= base[i] * (1 + 1e-9));
  }
}

TEST_CASE("information matrices are symmetric positive semidefinite across seeds") {
  SystemConfig c = oracle::small_config();
  for (int seed = 0; seed < 100; ++seed) {
    const Scene s = generate_scene(c, static_cast<std::uint64_t>(seed));
    const RMatrix j = assemble_data_bim(s, c, 0.3).j;
    CHECK((j - j.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(min_eigen(j) >= -1e-9 * j.norm());
    CHECK(j.diagonal().minCoeff() >= 0.0);
  }
}

TEST_CASE("distance bound converts delay variance") {
  RVector tau(3);
  tau << 0.0, 4.0 / (kSpeedOfLight * kSpeedOfLight), 1e-18;
  const RVector d = distance_crb(tau);
  CHECK(d[0] == 0.0);
  CHECK(d[1] == doctest::Approx(1.0));
  CHECK(d[2] == doctest::Approx(kSpeedOfLight * kSpeedOfLight / 4.0 * 1e-18));
}

TEST_CASE("gain bound halves for every 3.0103 dB once the prior is negligible") {
  SystemConfig c;
  const Grid g = build_uniform_grid(c, 25, 25);
  RowPrior flat = oracle_row_prior(c, g);
  flat.gain_variance *= 1e12;
  for (int seed = 0; seed < 3; ++seed) {
    const Scene s = generate_scene(c, static_cast<std::uint64_t>(seed), &g);
    const MeasurementFrame clean = noiseless_frame(s, c);
    const double n = noise_variance_for_snr(clean, 6.0);
    const double lo = evaluate_bcrb(s, c, n, flat).gain_nmse;
    const double hi = evaluate_bcrb(s, c, noise_variance_for_snr(clean, 6.0 + 10 * std::log10(2.0)), flat).gain_nmse;
    CHECK(hi / lo == doctest::Approx(0.5).epsilon(1e-6));
  }
  // seed 0 has comparable devices, so the actual prior barely matters there
  const Scene s = generate_scene(c, 0, &g);
  const MeasurementFrame clean = noiseless_frame(s, c);
  const RowPrior p = oracle_row_prior(c, g);
  const double lo = evaluate_bcrb(s, c, noise_variance_for_snr(clean, 6.0), p).gain_nmse;
  const double hi = evaluate_bcrb(s, c, noise_variance_for_snr(clean, 6.0 + 10 * std::log10(2.0)), p).gain_nmse;
  CHECK(hi / lo == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("summary reports per-real-coordinate and complex gain figures") {
  Fixture f;
  const BcrbSummary s = evaluate_bcrb(f.scene, f.config, f.noise, f.prior);
  CHECK(s.gain_nmse == doctest::Approx(0.5 * s.gain_nmse_complex));
  CHECK(s.angle_variance.size() == f.config.n_devices);
  CHECK(s.distance_variance[0] == doctest::Approx(kSpeedOfLight * kSpeedOfLight / 4.0 * s.delay_variance[0]));
  CHECK(s.gain_nmse > 0.0);
  CHECK(s.angle_nmse > 0.0);
}
