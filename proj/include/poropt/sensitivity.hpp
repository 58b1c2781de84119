#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "poropt/model.hpp"
#include "poropt/qoi.hpp"

namespace poropt::model {

/// Factorized operator and forward solution at one porosity. Shared between
/// the linearizations of different quantities evaluated at the same point.
struct LinearPoint {
  Vec phi;
  Factorization fact;
  Vec state;
};

inline std::shared_ptr<const LinearPoint> make_linear_point(const ForwardModel& fm, Vec phi) {
  auto pt = std::make_shared<LinearPoint>();
  pt->phi = std::move(phi);
  pt->fact = fm.factorize(pt->phi);
  pt->state = pt->fact.solve_state();
  return pt;
}

/// Adjoint-based derivatives of one quantity of interest at one porosity.
///
/// Construction at a fresh point costs one factorization pair, the forward
/// solve, and the adjoint solve; at a shared point only the adjoint is added.
/// Every Hessian action afterwards costs two more linearized solves and no
/// factorization. The porosity Hessian assumes the quantity has no second
/// porosity derivative at fixed state, which holds for both quantities here
/// (each is affine in porosity).
class Linearization {
 public:
  Linearization(const ForwardModel& fm, const Qoi& qoi, Vec phi)
      : Linearization(fm, qoi, make_linear_point(fm, std::move(phi))) {}

  Linearization(const ForwardModel& fm, const Qoi& qoi, std::shared_ptr<const LinearPoint> pt)
      : fm_(&fm), qoi_(&qoi), pt_(std::move(pt)) {
    vbar_ = -pt_->fact.solve_transposed(qoi.grad_u(pt_->state, pt_->phi));
    value_ = qoi.value(pt_->state, pt_->phi);
  }

  const ForwardModel& fm() const { return *fm_; }
  const Qoi& qoi() const { return *qoi_; }
  const Vec& phi() const { return pt_->phi; }
  const Factorization& fact() const { return pt_->fact; }
  const std::shared_ptr<const LinearPoint>& point() const { return pt_; }
  const Vec& state() const { return pt_->state; }
  const Vec& adjoint() const { return vbar_; }
  double value() const { return value_; }

  const Vec& gradient_phi() const {
    if (grad_.size() == 0)
      grad_ = qoi_->grad_phi(state(), phi()) + fm_->phi_pairing(state(), vbar_, /*with_rhs=*/true);
    return grad_;
  }

  /// State perturbation for a porosity perturbation.
  Vec tangent(const Vec& dphi) const {
    return -fact().solve(fm_->dstate_op(dphi, state(), /*with_rhs=*/true));
  }

  /// Adjoint perturbation for a porosity perturbation with known tangent.
  Vec second_adjoint(const Vec& dphi, const Vec& uhat) const {
    Vec rhs = qoi_->hess_u_apply(state(), phi(), uhat) + qoi_->mixed_dir(state(), phi(), dphi) +
              fm_->dstate_op_transposed(dphi, vbar_);
    return -fact().solve_transposed(rhs);
  }

  /// Porosity Hessian action assembled from precomputed tangent and second
  /// adjoint (lets callers reuse the solves).
  Vec hess_phi_from_parts(const Vec& /*dphi*/, const Vec& uhat, const Vec& vhat) const {
    return qoi_->mixed_adj(state(), phi(), uhat) +
           fm_->phi_pairing(state(), vhat, /*with_rhs=*/true) +
           fm_->phi_pairing(uhat, vbar_, /*with_rhs=*/false);
  }

  Vec hess_phi_apply(const Vec& dphi) const {
    Vec uhat = tangent(dphi);
    Vec vhat = second_adjoint(dphi, uhat);
    return hess_phi_from_parts(dphi, uhat, vhat);
  }

 private:
  const ForwardModel* fm_;
  const Qoi* qoi_;
  std::shared_ptr<const LinearPoint> pt_;
  Vec vbar_;
  double value_ = 0.0;
  mutable Vec grad_;
};

/// Derivatives through the porosity map phi = sigmoid(d + m). Design and
/// uncertain parameter enter symmetrically, so the same chain serves
/// d-derivatives and m-derivatives; all vectors live on mesh nodes.
class SigmoidChain {
 public:
  SigmoidChain(const ForwardModel& fm, const Qoi& qoi, const Vec& d, const Vec& m)
      : SigmoidChain(fm, qoi, d, m, make_linear_point(fm, porosity(d, m))) {}

  /// Shared-point variant; pt must have been built at porosity(d, m).
  SigmoidChain(const ForwardModel& fm, const Qoi& qoi, const Vec& d, const Vec& m,
               std::shared_ptr<const LinearPoint> pt)
      : lin_(fm, qoi, std::move(pt)) {
    if ((lin_.phi() - porosity(d, m)).lpNorm<Eigen::Infinity>() != 0.0)
      throw ConfigError("sigmoid chain: linear point does not match porosity(d, m)");
    const Vec& phi = lin_.phi();
    s1_.resize(phi.size());
    s2_.resize(phi.size());
    s3_.resize(phi.size());
    for (Eigen::Index i = 0; i < phi.size(); ++i) {
      s1_[i] = sigmoid_d1(phi[i]);
      s2_[i] = sigmoid_d2(phi[i]);
      s3_[i] = sigmoid_d3(phi[i]);
    }
  }

  const Linearization& lin() const { return lin_; }
  double value() const { return lin_.value(); }

  const Vec& gradient() const {
    if (grad_.size() == 0) grad_ = s1_.cwiseProduct(lin_.gradient_phi());
    return grad_;
  }

  Vec hess_apply(const Vec& x) const {
    return s2_.cwiseProduct(x).cwiseProduct(lin_.gradient_phi()) +
           s1_.cwiseProduct(lin_.hess_phi_apply(s1_.cwiseProduct(x)));
  }

  /// Gradient of sum_j alpha_j psi_j^T H psi_j with the directions psi held
  /// fixed, H being the Hessian reported by hess_apply. All the solve-bound
  /// contributions aggregate into one extra tangent/adjoint pair, so the cost
  /// is 2 x size(psi) + 2 linearized solves.
  Vec curvature_gradient(const std::vector<Vec>& psi, const Vec& alpha) const {
    if (static_cast<Eigen::Index>(psi.size()) != alpha.size())
      throw ConfigError("curvature gradient: weight count does not match direction count");
    const ForwardModel& fm = lin_.fm();
    const Qoi& qoi = lin_.qoi();
    const Vec& u = lin_.state();
    const Vec& vbar = lin_.adjoint();
    const Vec& phi = lin_.phi();
    const Vec& G = lin_.gradient_phi();

    Vec out = Vec::Zero(phi.size());
    Vec w = Vec::Zero(phi.size());
    Vec c_rhs = Vec::Zero(fm.n_state());
    Vec a_extra = Vec::Zero(fm.n_state());

    for (std::size_t j = 0; j < psi.size(); ++j) {
      const double aj = alpha[static_cast<Eigen::Index>(j)];
      if (aj == 0.0) continue;
      const Vec& p = psi[j];
      Vec phat = s1_.cwiseProduct(p);
      Vec uhat = lin_.tangent(phat);
      Vec vhat = lin_.second_adjoint(phat, uhat);
      Vec hphat = lin_.hess_phi_from_parts(phat, uhat, vhat);

      w += aj * s2_.cwiseProduct(p).cwiseProduct(p);
      out += aj * (s3_.cwiseProduct(p).cwiseProduct(p).cwiseProduct(G) +
                   2.0 * s2_.cwiseProduct(p).cwiseProduct(hphat));
      out += aj * s1_.cwiseProduct(2.0 * fm.phi_pairing(uhat, vhat, /*with_rhs=*/false) +
                                   qoi.mixed_uu_pair(phi, uhat, uhat));
      c_rhs += (2.0 * aj) * fm.dstate_op(phat, uhat, /*with_rhs=*/false);
      a_extra += aj * (qoi.third_u_apply(u, phi, uhat, uhat) +
                       2.0 * qoi.mixed_uu_dir(phi, phat, uhat) +
                       2.0 * fm.dstate_op_transposed(phat, vhat));
    }

    // One aggregated tangent collects the porosity motion of every state
    // perturbation above plus the directional response to w itself; one
    // aggregated adjoint closes the remaining pairings.
    Vec c = -lin_.fact().solve(fm.dstate_op(w, u, /*with_rhs=*/true) + c_rhs);
    Vec a = -lin_.fact().solve_transposed(qoi.hess_u_apply(u, phi, c) +
                                          qoi.mixed_dir(u, phi, w) +
                                          fm.dstate_op_transposed(w, vbar) + a_extra);
    out += s1_.cwiseProduct(qoi.mixed_adj(u, phi, c) + fm.phi_pairing(u, a, /*with_rhs=*/true) +
                            fm.phi_pairing(c, vbar, /*with_rhs=*/false));
    return out;
  }

 private:
  Linearization lin_;
  Vec s1_, s2_, s3_;
  mutable Vec grad_;
};

}  // namespace poropt::model
