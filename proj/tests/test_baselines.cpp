#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "risloc/baselines.hpp"

using namespace risloc;

TEST_CASE("OMP recovers exactly sparse vectors without noise") {
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const CMatrix z = oracle::random_matrix(rng, 30, 80);
    const CMatrix x = oracle::sparse_rows(rng, 80, 1, 4, 4);
    const CVector y = z * x.col(0);
    const OmpResult r = omp_column(y, z, 4);
    CHECK((r.coefficients - x.col(0)).norm() < 1e-10 * x.norm());
    std::vector<int> s = r.support;
    std::sort(s.begin(), s.end());
    std::vector<int> truth;
    for (int i = 0; i < 80; ++i)
      if (std::abs(x(i, 0)) > 0) truth.push_back(i);
    CHECK(s == truth);
    for (std::size_t k = 1; k < r.residual_norms.size(); ++k) CHECK(r.residual_norms[k] <= r.residual_norms[k - 1] + 1e-12);
    CHECK(r.residual_norms.back() < 1e-10 * y.norm());
  }
}

TEST_CASE("OMP picks the most correlated normalized atom first") {
  CMatrix z = CMatrix::Identity(4, 4);
  z(0, 0) = 10.0;  // scale must not matter
  CVector y(4);
  y << 1.0, 3.0, 2.0, 0.5;
  const OmpResult r = omp_column(y, z, 2);
  REQUIRE(r.support.size() == 2);
  CHECK(r.support[0] == 1);
  CHECK(r.support[1] == 2);
  CHECK(std::abs(r.coefficients[1] - 3.0) < 1e-14);
}

TEST_CASE("OMP stops on the residual tolerance, flags rank deficiency and rejects bad targets") {
  CMatrix z(3, 3);
  z << 1, 1, 0, 0, 0, 1, 0, 0, 0;  // columns 0 and 1 coincide
  CVector y(3);
  y << 1, 0, 1;  // after column 0 nothing correlates, so the duplicate column 1 is tried next
  const OmpResult r = omp_column(y, z, 3);
  CHECK(r.rank_deficient);
  CHECK(r.support == std::vector<int>{0});
  CVector e(3);
  e << 0, 2, 0;
  const OmpResult tol = omp_column(e, z, 0, 1e-9);
  CHECK(tol.support == std::vector<int>{2});
  CHECK_FALSE(tol.rank_deficient);
  CHECK_THROWS_AS(omp_column(y, z, 4), InputError);
  CHECK_THROWS_AS(omp_column(CVector::Zero(2), z, 1), StructuralError);
}

TEST_CASE("frame OMP support is the majority vote across blocks") {
  std::mt19937_64 rng(9);
  const Dictionary d = oracle::iid_dictionary(rng, 25, 40, 5);
  const CMatrix x = oracle::sparse_rows(rng, 40, 5, 3, 4);
  CMatrix y(25, 5);
  for (int m = 0; m < 5; ++m) y.col(m) = d.blocks[static_cast<std::size_t>(m)].matrix * x.col(m);
  const OmpFrameResult r = omp(y, d, 3);
  std::vector<int> truth;
  for (int i = 0; i < 40; ++i)
    if (x.row(i).norm() > 0) truth.push_back(i);
  CHECK(r.support() == truth);
  CHECK((r.coefficients - x).norm() < 1e-10 * x.norm());
}

TEST_CASE("BG-GAMP recovers a sparse column and keeps probabilities valid") {
  std::mt19937_64 rng(12);
  const Dictionary d = oracle::iid_dictionary(rng, 60, 120, 2);
  const CMatrix x = oracle::sparse_rows(rng, 120, 2, 6, 4);
  CMatrix y(60, 2);
  const double noise = 1e-4;
  for (int m = 0; m < 2; ++m) {
    y.col(m) = d.blocks[static_cast<std::size_t>(m)].matrix * x.col(m);
    for (int i = 0; i < 60; ++i) y(i, m) += complex_normal(rng, noise);
  }
  const PosteriorEstimate e = bg_gamp(y, d, BgPrior{6.0 / 120.0, 0.0, 1.0}, noise);
  CHECK((e.mean - x).squaredNorm() / x.squaredNorm() < 1e-3);
  CHECK(e.active_prob.minCoeff() >= 0.0);
  CHECK(e.active_prob.maxCoeff() <= 1.0);
  CHECK(e.row_prob.size() == 120);
  CHECK_THROWS_AS(make_bernoulli_gaussian_denoiser(BgPrior{0.0, 0.0, 1.0}), InputError);
}
