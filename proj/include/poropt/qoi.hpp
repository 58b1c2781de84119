#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "poropt/model.hpp"

namespace poropt::model {

/// Two-point Gauss rule on [0,1]; exact through cubics, enough for products
/// of three linear edge functions.
inline constexpr std::array<std::array<double, 2>, 2> kEdgeGaussPts = {{
    {0.21132486540518713, 0.5},
    {0.78867513459481287, 0.5},
}};

/// Scalar quantity evaluated on (state, porosity) with the derivative blocks
/// the adjoint machinery needs. Derivatives w.r.t. porosity are plain partials
/// at fixed state; all pairings are Euclidean on nodal vectors.
class Qoi {
 public:
  virtual ~Qoi() = default;
  virtual double value(const Vec& u, const Vec& phi) const = 0;
  virtual Vec grad_u(const Vec& u, const Vec& phi) const = 0;
  /// d2/du2 applied to x.
  virtual Vec hess_u_apply(const Vec& u, const Vec& phi, const Vec& x) const = 0;
  /// d3/du3 contracted with (x, y); zero for quadratic quantities.
  virtual Vec third_u_apply(const Vec& u, const Vec& phi, const Vec& x, const Vec& y) const = 0;
  virtual Vec grad_phi(const Vec& u, const Vec& phi) const = 0;
  /// (d2/dphi du) dphi, a state-sized vector.
  virtual Vec mixed_dir(const Vec& u, const Vec& phi, const Vec& dphi) const = 0;
  /// x^T (d2/dphi du), a porosity-sized vector.
  virtual Vec mixed_adj(const Vec& u, const Vec& phi, const Vec& x) const = 0;
  /// k -> x^T (d/dphi_k of d2/du2) y; nonzero only when the u-Hessian depends
  /// on porosity.
  virtual Vec mixed_uu_pair(const Vec& phi, const Vec& x, const Vec& y) const = 0;
  /// (d/dphi of d2/du2 in direction dphi) y, the other contraction of the
  /// same third-order block.
  virtual Vec mixed_uu_dir(const Vec& phi, const Vec& dphi, const Vec& y) const = 0;
};

/// Thermal compliance of the insulator: half the sum over phases of the
/// conduction energy plus the convective boundary pairing. Quadratic in the
/// temperatures, affine in porosity.
class ThermalCompliance final : public Qoi {
 public:
  explicit ThermalCompliance(const ForwardModel& fm) : fm_(&fm) {}

  double value(const Vec& u, const Vec& phi) const override {
    const Mesh& mesh = fm_->mesh();
    const MaterialParams& p = fm_->params();
    double q = 0.0;
    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      const double phi_c = (phi[c.v[0]] + phi[c.v[1]] + phi[c.v[2]]) / 3.0;
      Eigen::Vector2d gs = Eigen::Vector2d::Zero(), gf = Eigen::Vector2d::Zero();
      for (int a = 0; a < 3; ++a) {
        gs += g.grad.col(a) * u[fm_->ts(c.v[a])];
        gf += g.grad.col(a) * u[fm_->tf(c.v[a])];
      }
      q += 0.5 * g.area *
           (p.kappa_s * (1.0 - phi_c) * gs.squaredNorm() + p.kappa_f * phi_c * gf.squaredNorm());
    }
    for_each_robin_edge([&](const Edge& e, double len, double amb) {
      for (const auto& [t, w] : kEdgeGaussPts) {
        const double th_s = lerp(u[fm_->ts(e.v[0])], u[fm_->ts(e.v[1])], t);
        const double th_f = lerp(u[fm_->tf(e.v[0])], u[fm_->tf(e.v[1])], t);
        const double pf = lerp(phi[e.v[0]], phi[e.v[1]], t);
        q += 0.5 * w * len * p.h_air *
             ((1.0 - pf) * (th_s - amb) * th_s + pf * (th_f - amb) * th_f);
      }
    });
    return q;
  }

  Vec grad_u(const Vec& u, const Vec& phi) const override {
    const Mesh& mesh = fm_->mesh();
    const MaterialParams& p = fm_->params();
    Vec out = Vec::Zero(fm_->n_state());
    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      const double phi_c = (phi[c.v[0]] + phi[c.v[1]] + phi[c.v[2]]) / 3.0;
      Eigen::Vector2d gs = Eigen::Vector2d::Zero(), gf = Eigen::Vector2d::Zero();
      for (int a = 0; a < 3; ++a) {
        gs += g.grad.col(a) * u[fm_->ts(c.v[a])];
        gf += g.grad.col(a) * u[fm_->tf(c.v[a])];
      }
      for (int a = 0; a < 3; ++a) {
        out[fm_->ts(c.v[a])] += g.area * p.kappa_s * (1.0 - phi_c) * g.grad.col(a).dot(gs);
        out[fm_->tf(c.v[a])] += g.area * p.kappa_f * phi_c * g.grad.col(a).dot(gf);
      }
    }
    for_each_robin_edge([&](const Edge& e, double len, double amb) {
      for (const auto& [t, w] : kEdgeGaussPts) {
        const double shp[2] = {1.0 - t, t};
        const double th_s = lerp(u[fm_->ts(e.v[0])], u[fm_->ts(e.v[1])], t);
        const double th_f = lerp(u[fm_->tf(e.v[0])], u[fm_->tf(e.v[1])], t);
        const double pf = lerp(phi[e.v[0]], phi[e.v[1]], t);
        for (int a = 0; a < 2; ++a) {
          out[fm_->ts(e.v[a])] +=
              0.5 * w * len * p.h_air * (1.0 - pf) * (2.0 * th_s - amb) * shp[a];
          out[fm_->tf(e.v[a])] += 0.5 * w * len * p.h_air * pf * (2.0 * th_f - amb) * shp[a];
        }
      }
    });
    return out;
  }

  Vec hess_u_apply(const Vec& /*u*/, const Vec& phi, const Vec& x) const override {
    const Mesh& mesh = fm_->mesh();
    const MaterialParams& p = fm_->params();
    Vec out = Vec::Zero(fm_->n_state());
    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      const double phi_c = (phi[c.v[0]] + phi[c.v[1]] + phi[c.v[2]]) / 3.0;
      Eigen::Vector2d gs = Eigen::Vector2d::Zero(), gf = Eigen::Vector2d::Zero();
      for (int a = 0; a < 3; ++a) {
        gs += g.grad.col(a) * x[fm_->ts(c.v[a])];
        gf += g.grad.col(a) * x[fm_->tf(c.v[a])];
      }
      for (int a = 0; a < 3; ++a) {
        out[fm_->ts(c.v[a])] += g.area * p.kappa_s * (1.0 - phi_c) * g.grad.col(a).dot(gs);
        out[fm_->tf(c.v[a])] += g.area * p.kappa_f * phi_c * g.grad.col(a).dot(gf);
      }
    }
    for_each_robin_edge([&](const Edge& e, double len, double /*amb*/) {
      for (const auto& [t, w] : kEdgeGaussPts) {
        const double shp[2] = {1.0 - t, t};
        const double xs = lerp(x[fm_->ts(e.v[0])], x[fm_->ts(e.v[1])], t);
        const double xf = lerp(x[fm_->tf(e.v[0])], x[fm_->tf(e.v[1])], t);
        const double pf = lerp(phi[e.v[0]], phi[e.v[1]], t);
        for (int a = 0; a < 2; ++a) {
          out[fm_->ts(e.v[a])] += w * len * p.h_air * (1.0 - pf) * xs * shp[a];
          out[fm_->tf(e.v[a])] += w * len * p.h_air * pf * xf * shp[a];
        }
      }
    });
    return out;
  }

  Vec third_u_apply(const Vec&, const Vec&, const Vec&, const Vec&) const override {
    return Vec::Zero(fm_->n_state());
  }

  Vec grad_phi(const Vec& u, const Vec& phi) const override {
    const Mesh& mesh = fm_->mesh();
    const MaterialParams& p = fm_->params();
    (void)phi;
    Vec out = Vec::Zero(fm_->n_vertices());
    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      Eigen::Vector2d gs = Eigen::Vector2d::Zero(), gf = Eigen::Vector2d::Zero();
      for (int a = 0; a < 3; ++a) {
        gs += g.grad.col(a) * u[fm_->ts(c.v[a])];
        gf += g.grad.col(a) * u[fm_->tf(c.v[a])];
      }
      const double cell_val =
          0.5 * g.area / 3.0 * (-p.kappa_s * gs.squaredNorm() + p.kappa_f * gf.squaredNorm());
      for (int a = 0; a < 3; ++a) out[c.v[a]] += cell_val;
    }
    for_each_robin_edge([&](const Edge& e, double len, double amb) {
      for (const auto& [t, w] : kEdgeGaussPts) {
        const double shp[2] = {1.0 - t, t};
        const double th_s = lerp(u[fm_->ts(e.v[0])], u[fm_->ts(e.v[1])], t);
        const double th_f = lerp(u[fm_->tf(e.v[0])], u[fm_->tf(e.v[1])], t);
        const double val = 0.5 * p.h_air * (-(th_s - amb) * th_s + (th_f - amb) * th_f);
        for (int a = 0; a < 2; ++a) out[e.v[a]] += w * len * val * shp[a];
      }
    });
    return out;
  }

  Vec mixed_dir(const Vec& u, const Vec& phi, const Vec& dphi) const override {
    const Mesh& mesh = fm_->mesh();
    const MaterialParams& p = fm_->params();
    (void)phi;
    Vec out = Vec::Zero(fm_->n_state());
    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      const double dphi_c = (dphi[c.v[0]] + dphi[c.v[1]] + dphi[c.v[2]]) / 3.0;
      Eigen::Vector2d gs = Eigen::Vector2d::Zero(), gf = Eigen::Vector2d::Zero();
      for (int a = 0; a < 3; ++a) {
        gs += g.grad.col(a) * u[fm_->ts(c.v[a])];
        gf += g.grad.col(a) * u[fm_->tf(c.v[a])];
      }
      for (int a = 0; a < 3; ++a) {
        out[fm_->ts(c.v[a])] += -g.area * p.kappa_s * dphi_c * g.grad.col(a).dot(gs);
        out[fm_->tf(c.v[a])] += g.area * p.kappa_f * dphi_c * g.grad.col(a).dot(gf);
      }
    }
    for_each_robin_edge([&](const Edge& e, double len, double amb) {
      for (const auto& [t, w] : kEdgeGaussPts) {
        const double shp[2] = {1.0 - t, t};
        const double th_s = lerp(u[fm_->ts(e.v[0])], u[fm_->ts(e.v[1])], t);
        const double th_f = lerp(u[fm_->tf(e.v[0])], u[fm_->tf(e.v[1])], t);
        const double dp = lerp(dphi[e.v[0]], dphi[e.v[1]], t);
        for (int a = 0; a < 2; ++a) {
          out[fm_->ts(e.v[a])] += -0.5 * w * len * p.h_air * dp * (2.0 * th_s - amb) * shp[a];
          out[fm_->tf(e.v[a])] += 0.5 * w * len * p.h_air * dp * (2.0 * th_f - amb) * shp[a];
        }
      }
    });
    return out;
  }

  Vec mixed_adj(const Vec& u, const Vec& phi, const Vec& x) const override {
    const Mesh& mesh = fm_->mesh();
    const MaterialParams& p = fm_->params();
    (void)phi;
    Vec out = Vec::Zero(fm_->n_vertices());
    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      Eigen::Vector2d gs = Eigen::Vector2d::Zero(), gf = Eigen::Vector2d::Zero();
      Eigen::Vector2d xs = Eigen::Vector2d::Zero(), xf = Eigen::Vector2d::Zero();
      for (int a = 0; a < 3; ++a) {
        gs += g.grad.col(a) * u[fm_->ts(c.v[a])];
        gf += g.grad.col(a) * u[fm_->tf(c.v[a])];
        xs += g.grad.col(a) * x[fm_->ts(c.v[a])];
        xf += g.grad.col(a) * x[fm_->tf(c.v[a])];
      }
      const double cell_val =
          g.area / 3.0 * (-p.kappa_s * xs.dot(gs) + p.kappa_f * xf.dot(gf));
      for (int a = 0; a < 3; ++a) out[c.v[a]] += cell_val;
    }
    for_each_robin_edge([&](const Edge& e, double len, double amb) {
      for (const auto& [t, w] : kEdgeGaussPts) {
        const double shp[2] = {1.0 - t, t};
        const double th_s = lerp(u[fm_->ts(e.v[0])], u[fm_->ts(e.v[1])], t);
        const double th_f = lerp(u[fm_->tf(e.v[0])], u[fm_->tf(e.v[1])], t);
        const double xs = lerp(x[fm_->ts(e.v[0])], x[fm_->ts(e.v[1])], t);
        const double xf = lerp(x[fm_->tf(e.v[0])], x[fm_->tf(e.v[1])], t);
        const double val =
            0.5 * p.h_air * (-(2.0 * th_s - amb) * xs + (2.0 * th_f - amb) * xf);
        for (int a = 0; a < 2; ++a) out[e.v[a]] += w * len * val * shp[a];
      }
    });
    return out;
  }

  Vec mixed_uu_pair(const Vec& phi, const Vec& x, const Vec& y) const override {
    const Mesh& mesh = fm_->mesh();
    const MaterialParams& p = fm_->params();
    (void)phi;
    Vec out = Vec::Zero(fm_->n_vertices());
    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      Eigen::Vector2d xs = Eigen::Vector2d::Zero(), xf = Eigen::Vector2d::Zero();
      Eigen::Vector2d ys = Eigen::Vector2d::Zero(), yf = Eigen::Vector2d::Zero();
      for (int a = 0; a < 3; ++a) {
        xs += g.grad.col(a) * x[fm_->ts(c.v[a])];
        xf += g.grad.col(a) * x[fm_->tf(c.v[a])];
        ys += g.grad.col(a) * y[fm_->ts(c.v[a])];
        yf += g.grad.col(a) * y[fm_->tf(c.v[a])];
      }
      const double cell_val = g.area / 3.0 * (-p.kappa_s * xs.dot(ys) + p.kappa_f * xf.dot(yf));
      for (int a = 0; a < 3; ++a) out[c.v[a]] += cell_val;
    }
    for_each_robin_edge([&](const Edge& e, double len, double /*amb*/) {
      for (const auto& [t, w] : kEdgeGaussPts) {
        const double xs = lerp(x[fm_->ts(e.v[0])], x[fm_->ts(e.v[1])], t);
        const double xf = lerp(x[fm_->tf(e.v[0])], x[fm_->tf(e.v[1])], t);
        const double ys = lerp(y[fm_->ts(e.v[0])], y[fm_->ts(e.v[1])], t);
        const double yf = lerp(y[fm_->tf(e.v[0])], y[fm_->tf(e.v[1])], t);
        const double shp[2] = {1.0 - t, t};
        const double val = p.h_air * (-xs * ys + xf * yf);
        for (int a = 0; a < 2; ++a) out[e.v[a]] += w * len * val * shp[a];
      }
    });
    return out;
  }

  Vec mixed_uu_dir(const Vec& phi, const Vec& dphi, const Vec& y) const override {
    const Mesh& mesh = fm_->mesh();
    const MaterialParams& p = fm_->params();
    (void)phi;
    Vec out = Vec::Zero(fm_->n_state());
    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      const double dp_c = (dphi[c.v[0]] + dphi[c.v[1]] + dphi[c.v[2]]) / 3.0;
      Eigen::Vector2d ys = Eigen::Vector2d::Zero(), yf = Eigen::Vector2d::Zero();
      for (int a = 0; a < 3; ++a) {
        ys += g.grad.col(a) * y[fm_->ts(c.v[a])];
        yf += g.grad.col(a) * y[fm_->tf(c.v[a])];
      }
      for (int a = 0; a < 3; ++a) {
        out[fm_->ts(c.v[a])] += -g.area * p.kappa_s * dp_c * g.grad.col(a).dot(ys);
        out[fm_->tf(c.v[a])] += g.area * p.kappa_f * dp_c * g.grad.col(a).dot(yf);
      }
    }
    for_each_robin_edge([&](const Edge& e, double len, double /*amb*/) {
      for (const auto& [t, w] : kEdgeGaussPts) {
        const double shp[2] = {1.0 - t, t};
        const double ys = lerp(y[fm_->ts(e.v[0])], y[fm_->ts(e.v[1])], t);
        const double yf = lerp(y[fm_->tf(e.v[0])], y[fm_->tf(e.v[1])], t);
        const double dp = lerp(dphi[e.v[0]], dphi[e.v[1]], t);
        for (int a = 0; a < 2; ++a) {
          out[fm_->ts(e.v[a])] += -w * len * p.h_air * dp * ys * shp[a];
          out[fm_->tf(e.v[a])] += w * len * p.h_air * dp * yf * shp[a];
        }
      }
    });
    return out;
  }

 private:
  template <class F>
  void for_each_robin_edge(F&& f) const {
    const MaterialParams& p = fm_->params();
    for (const auto& e : fm_->mesh().edges) {
      if (e.tag == Tag::G1)
        f(e, fm_->mesh().edge_length(e), p.theta_amb1);
      else if (e.tag == Tag::G4)
        f(e, fm_->mesh().edge_length(e), p.theta_amb4);
    }
  }

  static double lerp(double a, double b, double t) { return a + (b - a) * t; }

  const ForwardModel* fm_;
};

/// Plane components of the effective solid stress in a cell. The insulator
/// uses the drained Lame pair (the pore-pressure part is excluded from the
/// failure measure); the beam adds the thermal stress at the centroid
/// temperature.
struct CellStress {
  double sx = 0, sy = 0, sz = 0, txy = 0;
};

inline double von_mises_3(double sx, double sy, double sz, double txy) {
  return std::sqrt(0.5 * ((sx - sy) * (sx - sy) + (sy - sz) * (sy - sz) + (sz - sx) * (sz - sx)) +
                   3.0 * txy * txy);
}

inline CellStress cell_stress(const ForwardModel& fm, const Vec& u, int cell_index) {
  const Mesh& mesh = fm.mesh();
  const MaterialParams& p = fm.params();
  const Cell& c = mesh.cells[cell_index];
  const fem::TriGeom g = mesh.geom(c);
  double ex = 0, ey = 0, gxy = 0;
  for (int a = 0; a < 3; ++a) {
    ex += g.grad.col(a)[0] * u[fm.ux(c.v[a])];
    ey += g.grad.col(a)[1] * u[fm.uy(c.v[a])];
    gxy += g.grad.col(a)[1] * u[fm.ux(c.v[a])] + g.grad.col(a)[0] * u[fm.uy(c.v[a])];
  }
  const bool beam = (c.dom == Domain::beam);
  const double lam = p.lame_eff(beam ? p.lambda_b : p.lambda, beam ? p.mu_b : p.mu);
  const double mu = beam ? p.mu_b : p.mu;
  CellStress s;
  s.sx = 2.0 * mu * ex + lam * (ex + ey);
  s.sy = 2.0 * mu * ey + lam * (ex + ey);
  s.sz = p.plane_stress ? 0.0 : lam * (ex + ey);
  s.txy = mu * gxy;
  if (beam) {
    double th = 0.0;
    for (int a = 0; a < 3; ++a) th += u[fm.tb(c.v[a])] / 3.0;
    const double dth = p.beta_T() * (th - p.theta_0);
    s.sx -= dth;
    s.sy -= dth;
    if (!p.plane_stress) s.sz -= dth;
  }
  return s;
}

/// Cellwise von Mises stress over the whole mesh.
inline Vec von_mises_field(const ForwardModel& fm, const Vec& u) {
  Vec vm(fm.mesh().n_cells());
  for (int ci = 0; ci < fm.mesh().n_cells(); ++ci) {
    CellStress s = cell_stress(fm, u, ci);
    vm[ci] = von_mises_3(s.sx, s.sy, s.sz, s.txy);
  }
  return vm;
}

/// p-norm aggregation of a cellwise stress measure over the insulator, with
/// the maximum factored out so large exponents cannot overflow.
inline double p_norm_stress(const Mesh& mesh, const Vec& vm_cells, double p_exp) {
  if (!(p_exp >= 2)) throw ConfigError("p-norm exponent must be >= 2");
  double vmax = 0.0;
  for (int ci = 0; ci < mesh.n_cells(); ++ci)
    if (mesh.cells[ci].dom == Domain::insulator) vmax = std::max(vmax, std::abs(vm_cells[ci]));
  if (vmax == 0.0) return 0.0;
  double acc = 0.0;
  for (int ci = 0; ci < mesh.n_cells(); ++ci) {
    const Cell& c = mesh.cells[ci];
    if (c.dom != Domain::insulator) continue;
    acc += mesh.geom(c).area * std::pow(std::abs(vm_cells[ci]) / vmax, p_exp);
  }
  return vmax * std::pow(acc, 1.0 / p_exp);
}

/// Chance function of the stress constraint: T_cr minus the aggregated
/// insulator stress.
inline double chance_function(const ForwardModel& fm, const Vec& u, const ChanceConfig& cc) {
  return cc.T_cr - p_norm_stress(fm.mesh(), von_mises_field(fm, u), cc.p_exponent);
}

/// The stress QoI driving the chance constraint. By default it is oriented as
/// exceedance, value = T_pn - T_cr, so that {value >= 0} is the failure event;
/// the literal flag returns T_cr - T_pn instead. Depends on the displacement
/// dofs of insulator cells only: every porosity partial vanishes, and the
/// aggregation is 1-homogeneous in the (offset-free) insulator stress, which
/// the derivative evaluation exploits by rescaling the state rather than
/// carrying large powers of the stress magnitude.
class StressChance final : public Qoi {
 public:
  StressChance(const ForwardModel& fm, ChanceConfig cc) : fm_(&fm), cc_(cc) {
    cc_.validate();
    const Mesh& mesh = fm.mesh();
    for (int ci = 0; ci < mesh.n_cells(); ++ci) {
      if (mesh.cells[ci].dom != Domain::insulator) continue;
      cells_.push_back(ci);
      areas_.push_back(mesh.geom(mesh.cells[ci]).area);
      const Cell& c = mesh.cells[ci];
      const fem::TriGeom g = mesh.geom(c);
      // Stress components (sx, sy, sz, txy) as a linear map of the six local
      // displacement dofs.
      Eigen::Matrix<double, 4, 6> D = Eigen::Matrix<double, 4, 6>::Zero();
      const double lam = fm.params().lame_eff(fm.params().lambda, fm.params().mu);
      const double mu = fm.params().mu;
      for (int a = 0; a < 3; ++a) {
        const double gx = g.grad.col(a)[0], gy = g.grad.col(a)[1];
        D(0, 2 * a) += (2.0 * mu + lam) * gx;
        D(0, 2 * a + 1) += lam * gy;
        D(1, 2 * a) += lam * gx;
        D(1, 2 * a + 1) += (2.0 * mu + lam) * gy;
        if (!fm.params().plane_stress) {
          D(2, 2 * a) += lam * gx;
          D(2, 2 * a + 1) += lam * gy;
        }
        D(3, 2 * a) += mu * gy;
        D(3, 2 * a + 1) += mu * gx;
      }
      Eigen::Matrix4d V;
      V << 1.0, -0.5, -0.5, 0.0,
          -0.5, 1.0, -0.5, 0.0,
          -0.5, -0.5, 1.0, 0.0,
          0.0, 0.0, 0.0, 3.0;
      G_.push_back(D.transpose() * V * D);
    }
  }

  const ChanceConfig& config() const { return cc_; }
  double orientation() const { return cc_.literal_sign ? 1.0 : -1.0; }

  double aggregated(const Vec& u) const {
    Scratch s;
    prepare(u, s);
    return s.S;
  }

  double value(const Vec& u, const Vec&) const override {
    return orientation() * (cc_.T_cr - aggregated(u));
  }

  Vec grad_u(const Vec& u, const Vec&) const override {
    Scratch s;
    prepare(u, s);
    Vec out = Vec::Zero(fm_->n_state());
    if (s.S == 0.0) return out;
    // dS/du = sum_c sZ^{s-1} A_c * dq_c, dq_c = 2 G_c u; gradient is
    // 0-homogeneous so the scaled state can be used directly.
    const double f = -orientation();
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      Vec6 gq = 2.0 * (G_[k] * s.uloc[k]);
      scatter(k, f * s.sz1 * s.A[k] * gq, out);
    }
    return out;
  }

  Vec hess_u_apply(const Vec& u, const Vec&, const Vec& x) const override {
    Scratch s;
    prepare(u, s);
    Vec out = Vec::Zero(fm_->n_state());
    if (s.S == 0.0) return out;
    const int K = static_cast<int>(cells_.size());
    std::vector<double> qpx(K);
    double Px = 0.0;
    std::vector<Vec6> xloc(K);
    for (int k = 0; k < K; ++k) {
      xloc[k] = gather(k, x);
      qpx[k] = 2.0 * s.uloc[k].dot(G_[k] * xloc[k]);
      Px += s.A[k] * qpx[k];
    }
    // Hess = s(s-1)Z^{s-2} (A.q')(A.q')^T + sZ^{s-1} diag-ish terms; the
    // -1 homogeneity is restored by the 1/M factor.
    const double f = -orientation() / s.M;
    for (int k = 0; k < K; ++k) {
      Vec6 gq = 2.0 * (G_[k] * s.uloc[k]);
      Vec6 contrib = s.sz2 * Px * s.A[k] * gq;
      contrib += s.sz1 * s.B[k] * qpx[k] * gq;
      contrib += s.sz1 * s.A[k] * 2.0 * (G_[k] * xloc[k]);
      scatter(k, f * contrib, out);
    }
    return out;
  }

  Vec third_u_apply(const Vec& u, const Vec&, const Vec& x, const Vec& y) const override {
    Scratch s;
    prepare(u, s);
    Vec out = Vec::Zero(fm_->n_state());
    if (s.S == 0.0) return out;
    const int K = static_cast<int>(cells_.size());
    std::vector<double> qpx(K), qpy(K), qxy(K);
    std::vector<Vec6> xloc(K), yloc(K);
    double Px = 0.0, Py = 0.0;
    for (int k = 0; k < K; ++k) {
      xloc[k] = gather(k, x);
      yloc[k] = gather(k, y);
      qpx[k] = 2.0 * s.uloc[k].dot(G_[k] * xloc[k]);
      qpy[k] = 2.0 * s.uloc[k].dot(G_[k] * yloc[k]);
      qxy[k] = 2.0 * xloc[k].dot(G_[k] * yloc[k]);
      Px += s.A[k] * qpx[k];
      Py += s.A[k] * qpy[k];
    }
    // y-derivative of P[x] = sum_c A_c q'_c[x].
    double dPx_y = 0.0;
    for (int k = 0; k < K; ++k) dPx_y += s.B[k] * qpy[k] * qpx[k] + s.A[k] * qxy[k];
    const double f = -orientation() / (s.M * s.M);
    for (int k = 0; k < K; ++k) {
      Vec6 gq = 2.0 * (G_[k] * s.uloc[k]);
      Vec6 gx = 2.0 * (G_[k] * xloc[k]);
      Vec6 gy = 2.0 * (G_[k] * yloc[k]);
      Vec6 contrib = Vec6::Zero();
      // From s(s-1)Z^{s-2} P[x] * sum A dq:
      contrib += s.sz3 * Py * Px * s.A[k] * gq;
      contrib += s.sz2 * dPx_y * s.A[k] * gq;
      contrib += s.sz2 * Px * (s.B[k] * qpy[k] * gq + s.A[k] * gy);
      // From sZ^{s-1} sum B_c q'_c[x] dq_c:
      contrib += s.sz2 * Py * s.B[k] * qpx[k] * gq;
      contrib += s.sz1 * (s.C[k] * qpy[k] * qpx[k] * gq + s.B[k] * qxy[k] * gq +
                          s.B[k] * qpx[k] * gy);
      // From sZ^{s-1} sum A_c 2 G_c x:
      contrib += s.sz2 * Py * s.A[k] * gx;
      contrib += s.sz1 * s.B[k] * qpy[k] * gx;
      scatter(k, f * contrib, out);
    }
    return out;
  }

  Vec grad_phi(const Vec&, const Vec&) const override { return Vec::Zero(fm_->n_vertices()); }
  Vec mixed_dir(const Vec&, const Vec&, const Vec&) const override {
    return Vec::Zero(fm_->n_state());
  }
  Vec mixed_adj(const Vec&, const Vec&, const Vec&) const override {
    return Vec::Zero(fm_->n_vertices());
  }
  Vec mixed_uu_pair(const Vec&, const Vec&, const Vec&) const override {
    return Vec::Zero(fm_->n_vertices());
  }
  Vec mixed_uu_dir(const Vec&, const Vec&, const Vec&) const override {
    return Vec::Zero(fm_->n_state());
  }

 private:
  using Vec6 = Eigen::Matrix<double, 6, 1>;

  struct Scratch {
    double M = 0.0;           // max cell von Mises
    double Z = 0.0;           // sum a_c q_c^{p/2} of the scaled state
    double S = 0.0;           // aggregated stress (unscaled)
    double sz1 = 0.0;         // s Z^{s-1}
    double sz2 = 0.0;         // s(s-1) Z^{s-2}
    double sz3 = 0.0;         // s(s-1)(s-2) Z^{s-3}
    std::vector<Vec6> uloc;   // scaled local displacements
    std::vector<double> q;    // scaled q_c in (0,1]
    std::vector<double> A;    // a_c (p/2) q^{p/2-1}
    std::vector<double> B;    // a_c (p/2)(p/2-1) q^{p/2-2}
    std::vector<double> C;    // a_c (p/2)(p/2-1)(p/2-2) q^{p/2-3}
  };

  Vec6 gather(std::size_t k, const Vec& x) const {
    const Cell& c = fm_->mesh().cells[cells_[k]];
    Vec6 v;
    for (int a = 0; a < 3; ++a) {
      v[2 * a] = x[fm_->ux(c.v[a])];
      v[2 * a + 1] = x[fm_->uy(c.v[a])];
    }
    return v;
  }

  void scatter(std::size_t k, const Vec6& v, Vec& out) const {
    const Cell& c = fm_->mesh().cells[cells_[k]];
    for (int a = 0; a < 3; ++a) {
      out[fm_->ux(c.v[a])] += v[2 * a];
      out[fm_->uy(c.v[a])] += v[2 * a + 1];
    }
  }

  void prepare(const Vec& u, Scratch& s) const {
    const int K = static_cast<int>(cells_.size());
    s.uloc.resize(K);
    s.q.resize(K);
    s.A.resize(K);
    s.B.resize(K);
    s.C.resize(K);
    double m2 = 0.0;
    for (int k = 0; k < K; ++k) {
      s.uloc[k] = gather(k, u);
      m2 = std::max(m2, s.uloc[k].dot(G_[k] * s.uloc[k]));
    }
    if (m2 <= 0.0) {
      s.M = 0.0;
      s.S = 0.0;
      return;
    }
    s.M = std::sqrt(m2);
    const double r = cc_.p_exponent / 2.0;
    // q^e with the q = 0 limit taken per exponent; after scaling q <= 1, so
    // coefficients with zero prefactor never see the huge negative powers.
    const auto powq = [](double q, double e) {
      if (q > 0.0) return std::pow(q, e);
      return e == 0.0 ? 1.0 : 0.0;
    };
    s.Z = 0.0;
    for (int k = 0; k < K; ++k) {
      s.uloc[k] /= s.M;
      const double q = std::max(s.uloc[k].dot(G_[k] * s.uloc[k]), 0.0);
      s.q[k] = q;
      const double a = areas_[k];
      s.A[k] = a * r * powq(q, r - 1.0);
      s.B[k] = (r == 1.0) ? 0.0 : a * r * (r - 1.0) * powq(q, r - 2.0);
      s.C[k] = (r == 1.0 || r == 2.0) ? 0.0 : a * r * (r - 1.0) * (r - 2.0) * powq(q, r - 3.0);
      s.Z += a * powq(q, r);
    }
    const double ps = 1.0 / cc_.p_exponent;
    s.S = s.M * std::pow(s.Z, ps);
    s.sz1 = ps * std::pow(s.Z, ps - 1.0);
    s.sz2 = ps * (ps - 1.0) * std::pow(s.Z, ps - 2.0);
    s.sz3 = ps * (ps - 1.0) * (ps - 2.0) * std::pow(s.Z, ps - 3.0);
  }

  const ForwardModel* fm_;
  ChanceConfig cc_;
  std::vector<int> cells_;
  std::vector<double> areas_;
  std::vector<Eigen::Matrix<double, 6, 6>> G_;
};

}  // namespace poropt::model
