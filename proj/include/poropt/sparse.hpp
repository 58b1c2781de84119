#pragma once

#include <atomic>
#include <memory>
#include <string>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "poropt/errors.hpp"

namespace poropt {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

/// Process-wide instrumentation: number of sparse factorizations performed.
/// Linearization points are required to trigger exactly two.
inline std::atomic<long>& factorization_count() {
  static std::atomic<long> n{0};
  return n;
}

/// Direct LU for the (generally nonsymmetric) coupled-system blocks. One
/// factorization serves both A x = b and A^T x = b. Held through a pointer
/// because Eigen's decomposition objects are not movable.
class LuSolver {
 public:
  void factorize(const SpMat& A) {
    lu_ = std::make_unique<Eigen::SparseLU<SpMat>>();
    lu_->compute(A);
    ++factorization_count();
    if (lu_->info() != Eigen::Success)
      throw SolverError("sparse LU factorization failed: " + lu_->lastErrorMessage());
    n_ = A.rows();
  }

  Vec solve(const Vec& b) const {
    Vec x = lu_->solve(b);
    if (lu_->info() != Eigen::Success) throw SolverError("sparse LU solve failed");
    return x;
  }

  Vec solve_transposed(const Vec& b) const {
    // transpose() is a view over the stored factors; no refactorization.
    Vec x = lu_->transpose().solve(b);
    if (lu_->info() != Eigen::Success) throw SolverError("sparse LU transpose solve failed");
    return x;
  }

  Eigen::Index rows() const { return n_; }

 private:
  std::unique_ptr<Eigen::SparseLU<SpMat>> lu_;
  Eigen::Index n_ = 0;
};

/// Cholesky for symmetric positive definite operators (mass matrix, SPDE
/// operator). Exposes the permuted factor so L L^T = M exactly.
class LltSolver {
 public:
  void factorize(const SpMat& A) {
    llt_.compute(A);
    ++factorization_count();
    if (llt_.info() != Eigen::Success)
      throw SolverError("sparse Cholesky failed: operator is not positive definite");
    n_ = A.rows();
  }

  Vec solve(const Vec& b) const {
    Vec x = llt_.solve(b);
    if (llt_.info() != Eigen::Success) throw SolverError("sparse Cholesky solve failed");
    return x;
  }

  Eigen::MatrixXd solve_dense(const Eigen::MatrixXd& B) const {
    Eigen::MatrixXd X = llt_.solve(B);
    if (llt_.info() != Eigen::Success) throw SolverError("sparse Cholesky solve failed");
    return X;
  }

  /// Lower-triangular-after-permutation factor L with L L^T equal to the
  /// factorized matrix: L = P^T L_chol.
  SpMat factor() const {
    SpMat L = llt_.matrixL();
    return llt_.permutationPinv() * L;
  }

  /// Solves L w = b for the factor returned by factor().
  Vec factor_solve(const Vec& b) const {
    Vec pb = llt_.permutationP() * b;
    return llt_.matrixL().solve(pb);
  }

  Eigen::Index rows() const { return n_; }

 private:
  Eigen::SimplicialLLT<SpMat> llt_;
  Eigen::Index n_ = 0;
};

/// Triplet accumulator with the usual add-into semantics.
class TripletList {
 public:
  void add(int r, int c, double v) { t_.emplace_back(r, c, v); }

  SpMat build(int rows, int cols) const {
    SpMat A(rows, cols);
    A.setFromTriplets(t_.begin(), t_.end());
    return A;
  }

  void reserve(std::size_t n) { t_.reserve(n); }

 private:
  std::vector<Eigen::Triplet<double>> t_;
};

}  // namespace poropt
