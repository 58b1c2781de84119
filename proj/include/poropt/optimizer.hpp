#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "poropt/assembly.hpp"
#include "poropt/eigensolver.hpp"
#include "poropt/matern.hpp"
#include "poropt/model.hpp"
#include "poropt/numeric.hpp"
#include "poropt/qoi.hpp"
#include "poropt/risk.hpp"
#include "poropt/sensitivity.hpp"

namespace poropt::opt {

using model::ForwardModel;
using model::Qoi;
using model::SigmoidChain;

/// Weights and measures of the penalized design cost
///   J(d) = E2[Q] + beta_v Var2[Q] + beta_r R(d) + (gamma/2) max(0, P - alpha_c)^2
/// where E2/Var2 are the quadratic expansions, R is Tikhonov smoothing of d,
/// and P is the smoothed probability of the stress criterion under the
/// quadratic surrogate of f.
struct CostConfig {
  double beta_v = 0.0;
  double beta_r = 0.0;
  model::ChanceConfig chance{};
  double gamma = 10.0;
  /// Logistic sharpness of the indicator relaxation; <= 0 derives the
  /// stress-scaled default 4 / T_cr.
  double omega = 0.0;
  int n_eig_q = 25;
  int n_eig_f = 25;
  int oversample = 10;
  int n_chance_samples = 1024;
  std::uint64_t sample_seed = 1;
  std::uint64_t sketch_seed = 0;

  void validate() const {
    if (beta_v < 0 || beta_r < 0) throw ConfigError("CostConfig: weights must be nonnegative");
    if (!(gamma > 0)) throw ConfigError("CostConfig: penalty gamma must be positive");
    if (n_eig_q < 1 || n_eig_f < 1) throw ConfigError("CostConfig: need at least one eigenpair");
    if (oversample < 0) throw ConfigError("CostConfig: oversample must be nonnegative");
    if (n_chance_samples < 1) throw ConfigError("CostConfig: need at least one chance sample");
    chance.validate();
  }
};

/// Outer-loop schedule: the smoothing and penalty weights grow geometrically
/// while an inexact Newton solve handles each fixed (omega, gamma).
struct ContinuationConfig {
  double omega0 = 0.0;  // <= 0 derives the 4 / T_cr scale
  double gamma0 = 10.0;
  double sigma_omega = 2.0;
  double sigma_gamma = 2.0;
  int k_max = 10;
  double tol_outer = 1e-3;  // on the rms design change between outer steps
  double tol_inner = 1e-2;  // relative gradient reduction inside Newton
  int max_inner = 200;
  int max_cg = 32;
  double armijo_c1 = 1e-4;
  int max_halvings = 30;
  double fd_step = 1e-6;      // base step of the FD Hessian action
  int report_samples = 4096;  // fresh surrogate samples for chance reporting

  void validate() const {
    if (!(sigma_omega > 1) || !(sigma_gamma > 1))
      throw ConfigError("ContinuationConfig: growth factors must exceed 1");
    if (k_max < 1) throw ConfigError("ContinuationConfig: k_max must be at least 1");
    if (!(gamma0 > 0)) throw ConfigError("ContinuationConfig: gamma0 must be positive");
    if (max_inner < 1 || max_cg < 1) throw ConfigError("ContinuationConfig: iteration caps");
    if (!(tol_outer > 0) || !(tol_inner > 0)) throw ConfigError("ContinuationConfig: tolerances");
  }
};

inline Vec clamp01(Vec d) {
  for (int i = 0; i < d.size(); ++i) d[i] = std::min(1.0, std::max(0.0, d[i]));
  return d;
}

/// One cost evaluation, with the gradient filled in on request.
struct Evaluation {
  double total = 0.0;
  double mean_q = 0.0;   // quadratic expansion of E[Q]
  double var_q = 0.0;    // quadratic expansion of Var[Q]
  double reg = 0.0;      // Tikhonov 1/2 int |grad d|^2
  double chance = 0.0;   // E[l_omega(f_QUAD)] over the frozen samples
  double penalty = 0.0;  // (gamma/2) max(0, chance - alpha_c)^2
  double value_q = 0.0, value_f = 0.0;
  Vec lambda_q, lambda_f;
  Vec gradient;  // empty unless requested
  long pde_solves = 0;
};

/// The smoothed penalized cost and its design gradient at a fixed anchor of
/// the chance surrogate. The uncertain-parameter samples and the eigenvector
/// projections c_ij = <psi_j^f, C^{-1} delta_i> are frozen between refresh()
/// calls (common random numbers), so within an outer step the objective is a
/// deterministic, differentiable function of d: the design enters through
/// (f_bar, f_bar^m, lambda^f) and through the Taylor moments of Q.
class PenaltyObjective {
 public:
  PenaltyObjective(const ForwardModel& fm, const Qoi& q, const Qoi& f,
                   const field::MaternField& field, CostConfig cfg)
      : fm_(fm),
        q_(q),
        f_(f),
        field_(field),
        cfg_(std::move(cfg)),
        reg_(fem::stiffness_matrix(fm.mesh())) {
    cfg_.validate();
    if (cfg_.omega <= 0) cfg_.omega = 4.0 / cfg_.chance.T_cr;
    draw_samples(cfg_.sample_seed);
  }

  const CostConfig& config() const { return cfg_; }
  double omega() const { return cfg_.omega; }
  double gamma() const { return cfg_.gamma; }
  void set_omega(double w) {
    if (!(w > 0)) throw ConfigError("PenaltyObjective: omega must be positive");
    cfg_.omega = w;
  }
  void set_gamma(double g) {
    if (!(g > 0)) throw ConfigError("PenaltyObjective: gamma must be positive");
    cfg_.gamma = g;
  }

  /// Redraws the frozen sample set and re-anchors the surrogate projections
  /// at the design d. Called once per outer continuation step.
  void refresh(const Vec& d, std::uint64_t seed) {
    draw_samples(seed);
    anchor(d);
  }

  Evaluation evaluate(const Vec& d, bool with_gradient) const {
    const long pde0 = model::pde_solve_count();
    if (d.size() != fm_.n_vertices()) throw ConfigError("PenaltyObjective: design size mismatch");
    if (ctil_.size() == 0) anchor(d);

    Vec phi = model::porosity(d, field_.config().mean);
    auto pt = model::make_linear_point(fm_, phi);
    SigmoidChain qc(fm_, q_, d, field_.config().mean, pt);
    SigmoidChain fc(fm_, f_, d, field_.config().mean, pt);

    spectral::EigenPairs pq = ghep(qc, cfg_.n_eig_q, cfg_.sketch_seed);
    spectral::EigenPairs pf = ghep(fc, cfg_.n_eig_f, cfg_.sketch_seed + 1);

    Evaluation ev;
    ev.value_q = qc.value();
    ev.value_f = fc.value();
    ev.lambda_q = pq.values;
    ev.lambda_f = pf.values;
    ev.mean_q = qc.value() + 0.5 * pq.values.sum();
    Vec cg = field_.apply_covariance(qc.gradient());
    ev.var_q = qc.gradient().dot(cg) + 0.5 * pq.values.squaredNorm();
    ev.reg = 0.5 * d.dot(reg_ * d);

    // Surrogate samples: f_i = f_bar + <f_bar^m, delta_i> + 1/2 sum_j
    // lambda_j c_ij^2 with the anchored projections c. The |lambda|-sorted
    // index pairing with the anchor is stable for the small steps the line
    // search takes; refresh() restores exact consistency each outer step.
    const int m = static_cast<int>(deltas_.cols());
    const int nf = static_cast<int>(std::min(ctil_.cols(), pf.values.size()));
    Vec fhat(m), lw(m);
    Vec glin = deltas_.transpose() * fc.gradient();
    for (int i = 0; i < m; ++i) {
      double quad = 0.0;
      for (int j = 0; j < nf; ++j) quad += pf.values[j] * ctil_(i, j) * ctil_(i, j);
      fhat[i] = fc.value() + glin[i] + 0.5 * quad;
      lw[i] = logistic_step(fhat[i], cfg_.omega);
    }
    ev.chance = lw.sum() / m;
    const double excess = std::max(0.0, ev.chance - cfg_.chance.alpha_c);
    ev.penalty = 0.5 * cfg_.gamma * excess * excess;
    ev.total = ev.mean_q + cfg_.beta_v * ev.var_q + cfg_.beta_r * ev.reg + ev.penalty;

    if (with_gradient) {
      // Mean term plus the eigenvalue sums: the adjoint trace pass carries
      // the weights (1/2 + beta_v lambda_j) of both expansions at once.
      Vec g = qc.gradient();
      std::vector<Vec> psi_q = columns(pq);
      Vec alpha_q(pq.count());
      for (int j = 0; j < pq.count(); ++j) alpha_q[j] = 0.5 + cfg_.beta_v * pq.values[j];
      g += qc.curvature_gradient(psi_q, alpha_q);
      if (cfg_.beta_v > 0) g += 2.0 * cfg_.beta_v * qc.hess_apply(cg);
      if (cfg_.beta_r > 0) g += cfg_.beta_r * (reg_ * d);

      const double kappa = cfg_.gamma * excess;
      if (kappa > 0) {
        Vec lprime(m);
        for (int i = 0; i < m; ++i) lprime[i] = logistic_step_d1(fhat[i], cfg_.omega);
        const double w0 = lprime.sum() / m;
        Vec y = deltas_ * lprime / m;
        Vec alpha_f = Vec::Zero(pf.count());
        for (int j = 0; j < nf; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += lprime[i] * ctil_(i, j) * ctil_(i, j);
          alpha_f[j] = 0.5 * s / m;
        }
        Vec gch = w0 * fc.gradient();
        if (y.squaredNorm() > 0) gch += fc.hess_apply(y);
        gch += fc.curvature_gradient(columns(pf), alpha_f);
        g += kappa * gch;
      }
      ev.gradient = std::move(g);
    }
    ev.pde_solves = model::pde_solve_count() - pde0;
    return ev;
  }

  /// Self-consistent surrogate probability at d: fresh eigenpairs, fresh
  /// projections, fresh samples, indicator counting. Used for reporting and
  /// for the outer-loop chance record; costs one linearization plus one
  /// sketch, with no PDE work per sample.
  double taylor_chance(const Vec& d, int n_samples, std::uint64_t seed) const {
    if (n_samples < 1) throw ConfigError("taylor_chance: need at least one sample");
    Vec phi = model::porosity(d, field_.config().mean);
    auto pt = model::make_linear_point(fm_, phi);
    SigmoidChain fc(fm_, f_, d, field_.config().mean, pt);
    spectral::EigenPairs pf = ghep(fc, cfg_.n_eig_f, cfg_.sketch_seed + 1);
    risk::QuadraticSurrogate surrogate(fc.value(), fc.gradient(), pf, field_);
    long hits = 0;
    for (int i = 0; i < n_samples; ++i) {
      Vec delta = field_.sample(seed, i) - field_.config().mean;
      if (surrogate(delta) >= 0.0) ++hits;
    }
    return static_cast<double>(hits) / n_samples;
  }

  const ForwardModel& forward_model() const { return fm_; }
  const field::MaternField& field() const { return field_; }

 private:
  spectral::EigenPairs ghep(const SigmoidChain& chain, int n_eig, std::uint64_t seed) const {
    spectral::GhepConfig gc;
    gc.n_eig = n_eig;
    gc.oversample = cfg_.oversample;
    gc.seed = seed;
    return spectral::randomized_ghep(
        fm_.n_vertices(), [&](const Vec& x) { return chain.hess_apply(x); },
        [&](const Vec& x) { return field_.apply_covariance(x); },
        [&](const Vec& x) { return field_.apply_precision(x); }, gc);
  }

  static std::vector<Vec> columns(const spectral::EigenPairs& p) {
    std::vector<Vec> cols(static_cast<std::size_t>(p.count()));
    for (int j = 0; j < p.count(); ++j) cols[static_cast<std::size_t>(j)] = p.vectors.col(j);
    return cols;
  }

  void draw_samples(std::uint64_t seed) {
    deltas_.resize(fm_.n_vertices(), cfg_.n_chance_samples);
    for (int i = 0; i < cfg_.n_chance_samples; ++i)
      deltas_.col(i) = field_.sample(seed, static_cast<std::uint64_t>(i)) - field_.config().mean;
    ctil_.resize(0, 0);
  }

  void anchor(const Vec& d) const {
    Vec phi = model::porosity(d, field_.config().mean);
    auto pt = model::make_linear_point(fm_, phi);
    SigmoidChain fc(fm_, f_, d, field_.config().mean, pt);
    spectral::EigenPairs pf = ghep(fc, cfg_.n_eig_f, cfg_.sketch_seed + 1);
    Eigen::MatrixXd proj(fm_.n_vertices(), pf.count());
    for (int j = 0; j < pf.count(); ++j) proj.col(j) = field_.apply_precision(pf.vectors.col(j));
    ctil_ = deltas_.transpose() * proj;  // (sample, mode)
  }

  const ForwardModel& fm_;
  const Qoi& q_;
  const Qoi& f_;
  const field::MaternField& field_;
  CostConfig cfg_;
  SpMat reg_;
  Eigen::MatrixXd deltas_;       // frozen fluctuations, one column per sample
  mutable Eigen::MatrixXd ctil_;  // frozen eigen-projections of the samples
};

struct IterateRecord {
  int iter = 0;
  double cost = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
  double chance = 0.0;
  long pde_solves = 0;
};

struct InnerResult {
  Vec d;
  std::vector<IterateRecord> history;
  bool converged = false;
  bool stalled = false;
  int cg_total = 0;
  double cost = 0.0;
  double grad_norm = 0.0;
};

/// Inexact Newton-CG with Armijo backtracking on the box [0,1]^n. The Newton
/// system uses finite differences of the design gradient along CG directions
/// (the gradient itself is adjoint-exact), with Eisenstat-Walker forcing
/// min(0.5, sqrt(|g|/|g0|)). Nonpositive curvature truncates CG at the last
/// good iterate, falling back to steepest descent on the first. Convergence
/// and the recorded grad_norm use the box KKT residual |d - clamp(d - g)|;
/// the raw gradient does not vanish where bounds are active. Any object
/// exposing evaluate(d, with_gradient) -> Evaluation can be minimized.
template <class Objective>
InnerResult incg_solve(const Objective& obj, Vec d0, double tol_rel,
                       const ContinuationConfig& cc) {
  cc.validate();
  InnerResult res;
  Vec d = clamp01(std::move(d0));
  Evaluation ev = obj.evaluate(d, true);
  const auto kkt = [](const Vec& at, const Vec& g) {
    return (at - clamp01(Vec(at - g))).norm();
  };
  const double g0 = ev.gradient.norm();
  const double pg0 = kkt(d, ev.gradient);
  double last_step = 0.0;

  for (int iter = 0; iter < cc.max_inner; ++iter) {
    const double gnorm = ev.gradient.norm();
    const double pg = kkt(d, ev.gradient);
    res.history.push_back({iter, ev.total, pg, last_step, ev.chance, ev.pde_solves});
    if (pg <= tol_rel * pg0 || pg == 0.0) {
      res.converged = true;
      break;
    }

    // FD Hessian action, one extra gradient per product.
    const double h = cc.fd_step * (1.0 + d.norm());
    auto hess_vec = [&](const Vec& v) {
      const double vn = v.norm();
      Vec gp = obj.evaluate(Vec(d + (h / vn) * v), true).gradient;
      return Vec((gp - ev.gradient) * (vn / h));
    };

    // CG on the Newton system with Eisenstat-Walker forcing.
    const double eta = std::min(0.5, std::sqrt(gnorm / g0));
    Vec p = Vec::Zero(d.size());
    Vec r = -ev.gradient;
    Vec dir = r;
    double rr = r.squaredNorm();
    for (int j = 0; j < cc.max_cg; ++j) {
      Vec bd = hess_vec(dir);
      ++res.cg_total;
      const double curv = dir.dot(bd);
      if (curv <= 1e-14 * dir.squaredNorm()) {
        if (j == 0) p = r;  // steepest descent when no curvature information
        break;
      }
      const double a = rr / curv;
      p += a * dir;
      r -= a * bd;
      const double rr_new = r.squaredNorm();
      if (std::sqrt(rr_new) <= eta * gnorm) break;
      dir = r + (rr_new / rr) * dir;
      rr = rr_new;
    }
    if (p.dot(ev.gradient) >= 0) p = -ev.gradient;

    // Projected-arc Armijo: sufficient decrease against the actual move.
    double t = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= cc.max_halvings; ++halving) {
      Vec cand = clamp01(Vec(d + t * p));
      Vec move = cand - d;
      if (move.squaredNorm() == 0.0) break;
      Evaluation trial = obj.evaluate(cand, false);
      if (trial.total <= ev.total + cc.armijo_c1 * ev.gradient.dot(move)) {
        d = std::move(cand);
        ev = obj.evaluate(d, true);
        last_step = t;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      res.stalled = true;
      break;
    }
  }

  res.cost = ev.total;
  res.grad_norm = kkt(d, ev.gradient);
  res.d = std::move(d);
  if (res.history.empty() || res.history.back().grad_norm != res.grad_norm)
    res.history.push_back({static_cast<int>(res.history.size()), ev.total, res.grad_norm,
                           last_step, ev.chance, ev.pde_solves});
  return res;
}

struct OuterRecord {
  int step = 0;
  double omega = 0.0;
  double gamma = 0.0;
  double cost = 0.0;
  double grad_norm = 0.0;
  double chance = 0.0;    // fresh surrogate indicator probability at the iterate
  double d_change = 0.0;  // rms change against the previous outer iterate
  bool stalled = false;
  int inner_iters = 0;
  long pde_solves = 0;
};

struct OptimizeResult {
  Vec d;
  std::vector<OuterRecord> outer;
  bool converged = false;
};

/// Continuation loop: freeze samples, solve the smoothed penalized problem,
/// then sharpen the indicator and stiffen the penalty. Stalls of the inner
/// solver are recorded and the schedule proceeds.
inline OptimizeResult adaptive_optimize(PenaltyObjective& obj, Vec d0,
                                        const ContinuationConfig& cc) {
  cc.validate();
  double omega = cc.omega0 > 0 ? cc.omega0 : 4.0 / obj.config().chance.T_cr;
  double gamma = cc.gamma0;
  OptimizeResult out;
  Vec d = clamp01(std::move(d0));
  const double nrm = std::sqrt(static_cast<double>(d.size()));

  for (int k = 0; k < cc.k_max; ++k) {
    const long pde0 = model::pde_solve_count();
    obj.set_omega(omega);
    obj.set_gamma(gamma);
    obj.refresh(d, obj.config().sample_seed + static_cast<std::uint64_t>(k));
    InnerResult inner = incg_solve(obj, d, cc.tol_inner, cc);

    OuterRecord rec;
    rec.step = k;
    rec.omega = omega;
    rec.gamma = gamma;
    rec.cost = inner.cost;
    rec.grad_norm = inner.grad_norm;
    rec.stalled = inner.stalled;
    rec.inner_iters = static_cast<int>(inner.history.size());
    rec.d_change = (inner.d - d).norm() / nrm;
    d = inner.d;
    rec.chance = obj.taylor_chance(d, cc.report_samples,
                                   obj.config().sample_seed + 7919 + static_cast<std::uint64_t>(k));
    rec.pde_solves = model::pde_solve_count() - pde0;
    out.outer.push_back(rec);

    if (rec.d_change <= cc.tol_outer) {
      out.converged = true;
      break;
    }
    omega *= cc.sigma_omega;
    gamma *= cc.sigma_gamma;
  }
  out.d = std::move(d);
  return out;
}

}  // namespace poropt::opt
