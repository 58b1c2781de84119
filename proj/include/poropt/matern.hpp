#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <utility>

#include <Eigen/Dense>

#include "poropt/assembly.hpp"
#include "poropt/errors.hpp"
#include "poropt/mesh.hpp"
#include "poropt/rng.hpp"
#include "poropt/sparse.hpp"

namespace poropt::field {

/// Convert marginal statistics of the stationary field to the coefficients of
/// the elliptic operator gamma*div(Theta grad) - delta, using
/// sigma^2 = 1/(4 pi delta gamma) and L_c = sqrt(8 gamma / delta).
inline std::pair<double, double> params_from_stats(double sigma, double L_c) {
  if (!(sigma > 0.0) || !(L_c > 0.0))
    throw ConfigError("field stats require sigma > 0 and L_c > 0");
  const double gamma = L_c / (sigma * std::sqrt(32.0 * std::numbers::pi));
  const double delta = 8.0 * gamma / (L_c * L_c);
  return {gamma, delta};
}

inline std::pair<double, double> stats_from_params(double gamma, double delta) {
  if (!(gamma > 0.0) || !(delta > 0.0))
    throw ConfigError("field coefficients require gamma > 0 and delta > 0");
  const double sigma = 1.0 / std::sqrt(4.0 * std::numbers::pi * delta * gamma);
  const double L_c = std::sqrt(8.0 * gamma / delta);
  return {sigma, L_c};
}

/// Rotated anisotropy tensor with eigenvalues {tx, ty} for every angle.
inline Eigen::Matrix2d anisotropy_tensor(double tx, double ty, double alpha) {
  const double s = std::sin(alpha), c = std::cos(alpha);
  Eigen::Matrix2d T;
  T << tx * s * s + ty * c * c, (tx - ty) * s * c,
       (tx - ty) * s * c,       tx * c * c + ty * s * s;
  return T;
}

struct MaternConfig {
  double gamma = 0.0;
  double delta = 0.0;
  double theta_x = 1.0;
  double theta_y = 1.0;
  double alpha_angle = 0.5 * std::numbers::pi;  // diag(theta_x, theta_y)
  /// Boundary coefficient of the Robin term. Negative means "derive it":
  /// sqrt(delta*gamma)/1.42 by default, gamma/1.42 with robin_length_form.
  double robin_coeff = -1.0;
  bool robin_length_form = false;
  Vec mean;  // empty = zero mean

  /// Anisotropy magnitudes below this are raised to it; the nearly singular
  /// tensor would otherwise make the operator ill conditioned.
  static constexpr double kAnisotropyFloor = 1e-4;

  double sigma() const { return stats_from_params(gamma, delta).first; }
  double correlation_length() const { return stats_from_params(gamma, delta).second; }

  double effective_robin() const {
    if (robin_coeff >= 0.0) return robin_coeff;
    return (robin_length_form ? gamma : std::sqrt(delta * gamma)) / 1.42;
  }

  void validate() const {
    if (!(gamma > 0.0) || !(delta > 0.0))
      throw ConfigError("MaternConfig: gamma and delta must be positive");
    if (!(theta_x > 0.0) || !(theta_y > 0.0))
      throw ConfigError("MaternConfig: anisotropy magnitudes must be positive");
    if (!std::isfinite(alpha_angle))
      throw ConfigError("MaternConfig: alpha_angle must be finite");
  }
};

/// Gaussian field m ~ N(mean, C) on the mesh vertices, realized by the
/// factorized elliptic operator A = gamma K_Theta + delta M + r B with a Robin
/// boundary term B on the whole boundary. C = A^{-1} M A^{-T}; white noise is
/// discretized as L xi with L L^T = M. Immutable after construction; sampling
/// and applies are const and safe to call concurrently.
class MaternField {
 public:
  MaternField(const fem::Mesh& mesh, MaternConfig cfg) : mesh_(&mesh), cfg_(std::move(cfg)) {
    cfg_.validate();
    const double tx = std::max(cfg_.theta_x, MaternConfig::kAnisotropyFloor);
    const double ty = std::max(cfg_.theta_y, MaternConfig::kAnisotropyFloor);
    theta_ = anisotropy_tensor(tx, ty, cfg_.alpha_angle);
    M_ = fem::mass_matrix(mesh);
    SpMat K = fem::stiffness_matrix(mesh, theta_);
    SpMat B = fem::boundary_mass(mesh);
    A_ = cfg_.gamma * K + cfg_.delta * M_ + cfg_.effective_robin() * B;
    op_llt_.factorize(A_);
    mass_llt_.factorize(M_);
    if (cfg_.mean.size() == 0) cfg_.mean = Vec::Zero(mesh.n_vertices());
    if (cfg_.mean.size() != mesh.n_vertices())
      throw ConfigError("MaternConfig: mean field size does not match the mesh");
  }

  int size() const { return mesh_->n_vertices(); }
  const MaternConfig& config() const { return cfg_; }
  const Eigen::Matrix2d& tensor() const { return theta_; }
  const SpMat& op() const { return A_; }
  const SpMat& mass() const { return M_; }
  const fem::Mesh& mesh() const { return *mesh_; }

  /// m = mean + A^{-1} L xi. Streams with distinct (seed, stream) pairs are
  /// independent regardless of evaluation order.
  Vec sample(std::uint64_t seed, std::uint64_t stream = 0) const {
    GaussianSampler g(stream_seed(seed, stream));
    Vec xi = g.vector(size());
    return cfg_.mean + op_llt_.solve(mass_llt_.factor() * xi);
  }

  Vec apply_covariance(const Vec& v) const {
    check_size(v);
    return op_llt_.solve(M_ * op_llt_.solve(v));
  }

  Vec apply_precision(const Vec& v) const {
    check_size(v);
    return A_ * mass_llt_.solve(A_ * v);
  }

  /// Inverse of the sampling map: recovers the driving noise of a sample.
  Vec whiten(const Vec& m) const {
    check_size(m);
    return mass_llt_.factor_solve(A_ * (m - cfg_.mean));
  }

  /// diag(C) by dense extraction: row norms of W = A^{-1} L. Quadratic memory,
  /// guarded; use marginal_variance_mc on large meshes.
  Vec marginal_variance() const {
    const int n = size();
    if (n > 20000)
      throw ConfigError("dense marginal variance needs n <= 20000; use the sampling estimate");
    Eigen::MatrixXd W = op_llt_.solve_dense(Eigen::MatrixXd(mass_llt_.factor()));
    return W.rowwise().squaredNorm();
  }

  /// Sampling estimate of diag(C) with its standard error (Gaussian fourth
  /// moment: se = var * sqrt(2/(M-1))).
  Vec marginal_variance_mc(int n_samples, std::uint64_t seed, Vec* stderr_out = nullptr) const {
    if (n_samples < 2) throw ConfigError("variance estimate needs at least two samples");
    const int n = size();
    Vec sum = Vec::Zero(n), sumsq = Vec::Zero(n);
    for (int s = 0; s < n_samples; ++s) {
      Vec m = sample(seed, static_cast<std::uint64_t>(s));
      sum += m;
      sumsq += m.cwiseProduct(m);
    }
    Vec mean = sum / n_samples;
    Vec var = (sumsq - double(n_samples) * mean.cwiseProduct(mean)) / (n_samples - 1.0);
    if (stderr_out) *stderr_out = var * std::sqrt(2.0 / (n_samples - 1.0));
    return var;
  }

 private:
  void check_size(const Vec& v) const {
    if (v.size() != size()) throw ConfigError("field vector size does not match the mesh");
  }

  const fem::Mesh* mesh_;
  MaternConfig cfg_;
  Eigen::Matrix2d theta_;
  SpMat A_, M_;
  LltSolver op_llt_, mass_llt_;
};

}  // namespace poropt::field
