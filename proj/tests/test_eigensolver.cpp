#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "poropt/eigensolver.hpp"
#include "poropt/matern.hpp"
#include "poropt/qoi.hpp"
#include "poropt/rng.hpp"
#include "poropt/sensitivity.hpp"

using namespace poropt;
using namespace poropt::spectral;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::MatrixXd random_spd(int n, std::uint64_t seed) {
  GaussianSampler g(seed);
  Eigen::MatrixXd r = g.matrix(n, n);
  return r.transpose() * r + n * Eigen::MatrixXd::Identity(n, n);
}

// Symmetric matrix with eigenvalues lambda (mixed signs allowed).
Eigen::MatrixXd with_spectrum(const Vec& lambda, std::uint64_t seed) {
  const int n = static_cast<int>(lambda.size());
  GaussianSampler g(seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g.matrix(n, n));
  Eigen::MatrixXd v = qr.householderQ();
  return v * lambda.asDiagonal() * v.transpose();
}

ApplyFn matvec(const Eigen::MatrixXd& a) {
  return [a](const Vec& x) { return Vec(a * x); };
}

}  // namespace

TEST_CASE("randomized pairs match the dense reference on a decaying spectrum") {
  const int n = 60;
  Vec lambda = Vec::Zero(n);
  for (int i = 0; i < 12; ++i) lambda[i] = (i % 3 == 1 ? -10.0 : 10.0) * std::pow(0.5, i);
  Eigen::MatrixXd h = with_spectrum(lambda, 5);
  Eigen::MatrixXd c = random_spd(n, 6);
  Eigen::MatrixXd c_inv = c.inverse();

  GhepConfig cfg;
  cfg.n_eig = 12;
  cfg.oversample = 30;  // sketch wide enough to capture the whole active part
  cfg.seed = 99;
  EigenPairs rnd = randomized_ghep(n, matvec(h), matvec(c), matvec(c_inv), cfg);
  EigenPairs ref = dense_ghep(h, c_inv, 12);

  REQUIRE(rnd.count() >= 8);
  for (int i = 0; i < 8; ++i) {
    CHECK_THAT(rnd.values[i], WithinRel(ref.values[i], 1e-8));
    // Vectors agree up to sign in the C^{-1} geometry.
    const double overlap = rnd.vectors.col(i).dot(c_inv * ref.vectors.col(i));
    CHECK_THAT(std::abs(overlap), WithinRel(1.0, 1e-6));
  }
}

TEST_CASE("low-rank curvature is recovered exactly and the sketch deflates") {
  const int n = 50, rank = 8;
  GaussianSampler g(17);
  Eigen::MatrixXd b = g.matrix(n, rank);
  Vec sign(rank);
  for (int i = 0; i < rank; ++i) sign[i] = (i % 2 == 0) ? 1.0 : -1.0;
  Eigen::MatrixXd h = b * sign.asDiagonal() * b.transpose();
  Eigen::MatrixXd c = random_spd(n, 18);
  Eigen::MatrixXd c_inv = c.inverse();

  GhepConfig cfg;
  cfg.n_eig = 15;
  cfg.oversample = 10;
  cfg.seed = 4;
  EigenPairs rnd = randomized_ghep(n, matvec(h), matvec(c), matvec(c_inv), cfg);
  EigenPairs ref = dense_ghep(h, c_inv, rank);

  // Only the true rank survives.
  REQUIRE(rnd.count() == rank);
  for (int i = 0; i < rank; ++i) CHECK_THAT(rnd.values[i], WithinRel(ref.values[i], 1e-9));

  // C^{-1}-orthonormality and the Rayleigh quotient identity.
  Eigen::MatrixXd gram = rnd.vectors.transpose() * c_inv * rnd.vectors;
  CHECK((gram - Eigen::MatrixXd::Identity(rank, rank)).norm() < 1e-10);
  for (int i = 0; i < rank; ++i)
    CHECK_THAT(rnd.vectors.col(i).dot(h * rnd.vectors.col(i)), WithinRel(rnd.values[i], 1e-9));

  // Residual of the generalized problem.
  for (int i = 0; i < rank; ++i) {
    Vec res = h * rnd.vectors.col(i) - rnd.values[i] * (c_inv * rnd.vectors.col(i));
    CHECK(res.norm() < 1e-9 * std::abs(rnd.values[i]) * (c_inv * rnd.vectors.col(i)).norm());
  }
}

TEST_CASE("sketch is deterministic in the seed") {
  const int n = 40;
  Vec lambda = Vec::Zero(n);
  for (int i = 0; i < 10; ++i) lambda[i] = std::pow(0.7, i);
  Eigen::MatrixXd h = with_spectrum(lambda, 21);
  Eigen::MatrixXd c = random_spd(n, 22);
  Eigen::MatrixXd c_inv = c.inverse();

  GhepConfig cfg;
  cfg.n_eig = 6;
  cfg.oversample = 8;
  cfg.seed = 1234;
  EigenPairs a = randomized_ghep(n, matvec(h), matvec(c), matvec(c_inv), cfg);
  EigenPairs b = randomized_ghep(n, matvec(h), matvec(c), matvec(c_inv), cfg);
  CHECK(a.values == b.values);
  CHECK(a.vectors == b.vectors);

  cfg.seed = 4321;
  EigenPairs d = randomized_ghep(n, matvec(h), matvec(c), matvec(c_inv), cfg);
  CHECK((a.values - d.values).norm() != 0.0);

  GhepConfig bad;
  bad.n_eig = 0;
  CHECK_THROWS_AS(randomized_ghep(n, matvec(h), matvec(c), matvec(c_inv), bad), ConfigError);
  CHECK_THROWS_AS(dense_ghep(h, Eigen::MatrixXd::Identity(n + 1, n + 1), 3), ConfigError);
  CHECK_THROWS_AS(dense_ghep(Eigen::MatrixXd::Identity(300, 300),
                             Eigen::MatrixXd::Identity(300, 300), 3),
                  ConfigError);
}

TEST_CASE("covariance-preconditioned curvature of the model matches the dense route") {
  fem::Mesh mesh = fem::Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  const int n = mesh.n_vertices();
  model::ForwardModel fm(mesh, model::MaterialParams{});

  field::MaternConfig mc;
  std::tie(mc.gamma, mc.delta) = field::params_from_stats(0.4, 0.35);
  field::MaternField field(mesh, mc);

  Vec d = Vec::Constant(n, 0.4);
  Vec m = Vec::Zero(n);
  model::ThermalCompliance qoi(fm);
  model::SigmoidChain chain(fm, qoi, d, m);

  Eigen::MatrixXd h_dense(n, n);
  for (int j = 0; j < n; ++j) h_dense.col(j) = chain.hess_apply(Vec(Vec::Unit(n, j)));
  h_dense = 0.5 * (h_dense + h_dense.transpose()).eval();
  Eigen::MatrixXd c_inv_dense(n, n);
  for (int j = 0; j < n; ++j) c_inv_dense.col(j) = field.apply_precision(Vec(Vec::Unit(n, j)));
  c_inv_dense = 0.5 * (c_inv_dense + c_inv_dense.transpose()).eval();

  // A full-width sketch makes the randomized path algebraically exact, which
  // pins the operator plumbing (Hessian actions, covariance, precision)
  // independently of spectral decay.
  GhepConfig cfg;
  cfg.n_eig = 5;
  cfg.oversample = n - 5;
  cfg.seed = 7;
  EigenPairs rnd = randomized_ghep(
      n, [&](const Vec& x) { return chain.hess_apply(x); },
      [&](const Vec& x) { return field.apply_covariance(x); },
      [&](const Vec& x) { return field.apply_precision(x); }, cfg);
  EigenPairs ref = dense_ghep(h_dense, c_inv_dense, 5);

  REQUIRE(rnd.count() == 5);
  for (int i = 0; i < 5; ++i) CHECK_THAT(rnd.values[i], WithinRel(ref.values[i], 1e-8));
  Eigen::MatrixXd gram = rnd.vectors.transpose() * c_inv_dense * rnd.vectors;
  CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).norm() < 1e-8);
}
