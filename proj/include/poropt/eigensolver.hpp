#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "poropt/errors.hpp"
#include "poropt/rng.hpp"
#include "poropt/sparse.hpp"

namespace poropt::spectral {

using ApplyFn = std::function<Vec(const Vec&)>;

struct GhepConfig {
  int n_eig = 25;
  int oversample = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_eig < 1) throw ConfigError("GhepConfig: n_eig must be at least 1");
    if (oversample < 0) throw ConfigError("GhepConfig: oversample must be nonnegative");
  }
};

/// Eigenpairs of H psi = lambda C^{-1} psi, sorted by decreasing |lambda|.
/// The columns of vectors are C^{-1}-orthonormal, so lambda_i equals
/// psi_i^T H psi_i and the pairs diagonalize the covariance-preconditioned
/// curvature.
struct EigenPairs {
  Vec values;
  Eigen::MatrixXd vectors;

  int count() const { return static_cast<int>(values.size()); }
};

/// Randomized double-pass solver for the generalized eigenproblem
/// H psi = lambda C^{-1} psi with H symmetric and C symmetric positive
/// definite, both given as operators. One pass of H builds the sketch
/// Y = C H Omega, a second builds the small projected matrix; 2 (n_eig +
/// oversample) applications of H in total. Rank-deficient sketches deflate:
/// fewer than n_eig pairs may come back.
inline EigenPairs randomized_ghep(Eigen::Index n, const ApplyFn& h_apply, const ApplyFn& c_apply,
                                  const ApplyFn& c_inv_apply, const GhepConfig& cfg) {
  cfg.validate();
  const Eigen::Index L = std::min<Eigen::Index>(n, cfg.n_eig + cfg.oversample);
  GaussianSampler gauss(cfg.seed);
  Eigen::MatrixXd omega = gauss.matrix(n, L);

  Eigen::MatrixXd y(n, L);
  for (Eigen::Index j = 0; j < L; ++j) y.col(j) = c_apply(h_apply(omega.col(j)));

  // Gram-Schmidt in the C^{-1} inner product, two passes, with deflation of
  // columns that collapse to roundoff (H of low numerical rank).
  Eigen::MatrixXd q(n, L);   // C^{-1}-orthonormal basis
  Eigen::MatrixXd w(n, L);   // C^{-1} q, cached
  Eigen::Index r = 0;
  double max_nrm2 = 0.0;
  for (Eigen::Index j = 0; j < L; ++j) {
    Vec v = y.col(j);
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index i = 0; i < r; ++i) v -= q.col(i) * w.col(i).dot(v);
    Vec cv = c_inv_apply(v);
    const double nrm2 = v.dot(cv);
    max_nrm2 = std::max(max_nrm2, nrm2);
    if (!(nrm2 > 0.0) || nrm2 <= 1e-24 * max_nrm2) continue;
    const double s = 1.0 / std::sqrt(nrm2);
    q.col(r) = s * v;
    w.col(r) = s * cv;
    ++r;
  }
  if (r == 0) {
    EigenPairs none;
    none.values = Vec(0);
    none.vectors = Eigen::MatrixXd(n, 0);
    return none;
  }

  Eigen::MatrixXd t(r, r);
  {
    Eigen::MatrixXd hq(n, r);
    for (Eigen::Index j = 0; j < r; ++j) hq.col(j) = h_apply(q.col(j));
    t = q.leftCols(r).transpose() * hq;
    t = 0.5 * (t + t.transpose()).eval();
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
  if (es.info() != Eigen::Success) throw SolverError("projected eigendecomposition failed");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::abs(es.eigenvalues()[a]) > std::abs(es.eigenvalues()[b]);
  });

  const Eigen::Index k = std::min<Eigen::Index>(cfg.n_eig, r);
  EigenPairs out;
  out.values.resize(k);
  out.vectors.resize(n, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.values[i] = es.eigenvalues()[order[static_cast<std::size_t>(i)]];
    out.vectors.col(i) =
        q.leftCols(r) * es.eigenvectors().col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

/// Dense reference for small problems: H psi = lambda C^{-1} psi via the
/// generalized symmetric solver, same ordering and normalization as the
/// randomized path.
inline EigenPairs dense_ghep(const Eigen::MatrixXd& h, const Eigen::MatrixXd& c_inv, int n_eig) {
  if (h.rows() != h.cols() || c_inv.rows() != c_inv.cols() || h.rows() != c_inv.rows())
    throw ConfigError("dense_ghep: dimension mismatch");
  if (h.rows() > 200)
    throw ConfigError("dense_ghep: reference solver is limited to 200 unknowns");
  if (n_eig < 1) throw ConfigError("dense_ghep: n_eig must be at least 1");

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(h, c_inv, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (es.info() != Eigen::Success) throw SolverError("dense generalized eigendecomposition failed");

  const Eigen::Index n = h.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::abs(es.eigenvalues()[a]) > std::abs(es.eigenvalues()[b]);
  });

  const Eigen::Index k = std::min<Eigen::Index>(n_eig, n);
  EigenPairs out;
  out.values.resize(k);
  out.vectors.resize(n, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.values[i] = es.eigenvalues()[order[static_cast<std::size_t>(i)]];
    out.vectors.col(i) = es.eigenvectors().col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace poropt::spectral
