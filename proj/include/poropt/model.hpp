#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "poropt/assembly.hpp"
#include "poropt/errors.hpp"
#include "poropt/mesh.hpp"
#include "poropt/numeric.hpp"
#include "poropt/sparse.hpp"

namespace poropt::model {

using fem::Cell;
using fem::Domain;
using fem::Edge;
using fem::Mesh;
using fem::Tag;

/// Linearized coupled solves performed so far (one per full forward, tangent,
/// or adjoint pass). The per-block triangular solves are tracked separately.
inline std::atomic<long>& pde_solve_count() {
  static std::atomic<long> n{0};
  return n;
}

inline std::atomic<long>& block_solve_count() {
  static std::atomic<long> n{0};
  return n;
}

struct MaterialParams {
  // Conduction and exchange.
  double kappa_s = 0.477;   // W/mK, solid aerogel skeleton
  double kappa_f = 0.085;   // W/mK, pore fluid
  double kappa_b = 5.0;     // W/mK, beam
  double h = 81059.0;       // W/m^2K, interphase exchange
  double h_air = 10.0;      // W/m^2K, convective boundary
  double theta_amb1 = 293.0;  // K, ambient below the insulator
  double theta_amb4 = 293.0;  // K, ambient on insulator sides
  double theta_amb3 = 313.0;  // K, ambient above the beam
  double theta_0 = 293.0;     // K, stress-free reference

  // Elasticity.
  double D = 0.25e-8;       // 1/Pa, fluid compressibility
  double lambda = 6.77e9;   // Pa, insulator Lame
  double mu = 3.38e9;       // Pa
  double lambda_b = 17.3e9;  // Pa, beam Lame
  double mu_b = 11.5e9;      // Pa
  double alpha_T = 1e-5;     // 1/K, beam thermal expansion
  bool plane_stress = false;  // default plane strain

  // Boundary data (not printed anywhere; always config-supplied).
  Eigen::Vector2d ubar1 = Eigen::Vector2d::Zero();  // m, prescribed on G1
  Eigen::Vector2d ubar3 = Eigen::Vector2d::Zero();  // m, prescribed on G3
  Eigen::Vector2d traction = Eigen::Vector2d::Zero();  // Pa, applied on G2

  double beta_T() const { return alpha_T * (3.0 * lambda_b + 2.0 * mu_b); }

  /// Lame lambda entering the constitutive matrix (plane-stress swap).
  double lame_eff(double lam, double m) const {
    return plane_stress ? 2.0 * lam * m / (lam + 2.0 * m) : lam;
  }

  void validate() const {
    if (!(kappa_s > 0) || !(kappa_f > 0) || !(kappa_b > 0))
      throw ConfigError("MaterialParams: conductivities must be positive");
    if (!(h > 0) || !(h_air > 0))
      throw ConfigError("MaterialParams: exchange coefficients must be positive");
    if (!(D > 0)) throw ConfigError("MaterialParams: compressibility D must be positive");
    if (!(mu > 0) || !(mu_b > 0) || !(lambda > 0) || !(lambda_b > 0))
      throw ConfigError("MaterialParams: elastic moduli must be positive");
  }
};

struct ChanceConfig {
  double T_cr = 22.5e6;      // Pa, limiting critical stress
  double p_exponent = 8.0;   // aggregation sharpness
  double alpha_c = 0.05;     // critical chance
  /// Default orientation treats stress above T_cr as the rare event. The
  /// literal flag flips the constrained tail to P(T_cr - T_pn >= 0).
  bool literal_sign = false;

  void validate() const {
    if (!(T_cr > 0)) throw ConfigError("ChanceConfig: T_cr must be positive");
    if (!(p_exponent >= 2)) throw ConfigError("ChanceConfig: p-norm exponent must be >= 2");
    if (!(alpha_c > 0) || !(alpha_c < 1))
      throw ConfigError("ChanceConfig: alpha_c must lie in (0,1)");
  }
};

/// Nodal porosity from design and uncertain parameter.
inline Vec porosity(const Vec& d, const Vec& m) {
  if (d.size() != m.size()) throw ConfigError("porosity: d and m sizes differ");
  Vec phi(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) phi[i] = sigmoid(d[i] + m[i]);
  return phi;
}

enum class RowKind : std::uint8_t { free_row, fixed, trace };

/// Both block factorizations of the coupled Jacobian (thermal 3n, mechanical
/// 2n) plus the lower coupling block. A full linearized solve or transposed
/// solve is one forward/back pass through the triangular structure.
struct Factorization {
  int n = 0;
  SpMat A;          // full constrained operator, 5n x 5n
  Vec b;            // constrained right-hand side
  LuSolver thermal;  // rows/cols [0, 3n)
  LuSolver mech;     // rows/cols [3n, 5n)
  SpMat coupling;    // mech rows x thermal cols

  Vec solve(const Vec& r) const {
    Vec x(5 * n);
    x.head(3 * n) = thermal.solve(r.head(3 * n));
    x.tail(2 * n) = mech.solve(r.tail(2 * n) - coupling * x.head(3 * n));
    ++pde_solve_count();
    block_solve_count() += 2;
    return x;
  }

  Vec solve_transposed(const Vec& r) const {
    Vec y(5 * n);
    y.tail(2 * n) = mech.solve_transposed(r.tail(2 * n));
    y.head(3 * n) = thermal.solve_transposed(Vec(r.head(3 * n) - coupling.transpose() * y.tail(2 * n)));
    ++pde_solve_count();
    block_solve_count() += 2;
    return y;
  }

  Vec solve_state() const { return solve(b); }
};

/// Steady coupled thermomechanical model on the beam-insulator layout.
///
/// State layout (n = vertex count): solid temperature [0,n), fluid temperature
/// [n,2n), beam temperature [2n,3n), displacement [3n,5n) interleaved (x,y).
/// The operator is affine in the nodal porosity, A(phi) u = b(phi), and block
/// lower-triangular: temperatures never see the displacement, the beam
/// temperature drives thermal stress.
///
/// Constraints are imposed by row replacement (columns untouched, so adjoint
/// solves recover reactions): displacement rows on G1/G3 carry prescribed
/// values, side rows pin the normal component, and insulator temperatures at
/// beam-attached vertices follow the beam temperature through trace rows.
class ForwardModel {
 public:
  ForwardModel(const Mesh& mesh, MaterialParams params)
      : mesh_(&mesh), p_(std::move(params)) {
    p_.validate();
    const int n = mesh.n_vertices();
    kind_.assign(5 * n, RowKind::free_row);
    value_.assign(5 * n, 0.0);
    peer_.assign(5 * n, -1);

    beam_vertex_.assign(n, false);
    insulator_vertex_.assign(n, false);
    for (const auto& c : mesh.cells) {
      auto& flags = (c.dom == Domain::beam) ? beam_vertex_ : insulator_vertex_;
      for (int v : c.v) flags[v] = true;
    }

    for (int i = 0; i < n; ++i) {
      if (beam_vertex_[i]) {
        // theta_s/theta_f follow the beam temperature (interface trace, and
        // the extension of the insulator fields into the beam).
        kind_[ts(i)] = RowKind::trace;
        peer_[ts(i)] = tb(i);
        kind_[tf(i)] = RowKind::trace;
        peer_[tf(i)] = tb(i);
      }
      if (!beam_vertex_[i]) {
        // Dead beam dofs away from the beam.
        kind_[tb(i)] = RowKind::fixed;
        value_[tb(i)] = p_.theta_0;
      }
    }

    // Rollers first so that full constraints at the corners win.
    for (const auto& e : mesh.edges) {
      if (e.tag == Tag::G2 || e.tag == Tag::G4)
        for (int v : e.v) {
          kind_[ux(v)] = RowKind::fixed;
          value_[ux(v)] = 0.0;
        }
    }
    for (const auto& e : mesh.edges) {
      if (e.tag != Tag::G1 && e.tag != Tag::G3) continue;
      const Eigen::Vector2d& ubar = (e.tag == Tag::G1) ? p_.ubar1 : p_.ubar3;
      for (int v : e.v) {
        kind_[ux(v)] = RowKind::fixed;
        value_[ux(v)] = ubar.x();
        kind_[uy(v)] = RowKind::fixed;
        value_[uy(v)] = ubar.y();
      }
    }
  }

  const Mesh& mesh() const { return *mesh_; }
  const MaterialParams& params() const { return p_; }
  int n_vertices() const { return mesh_->n_vertices(); }
  int n_state() const { return 5 * mesh_->n_vertices(); }

  int ts(int i) const { return i; }
  int tf(int i) const { return n_vertices() + i; }
  int tb(int i) const { return 2 * n_vertices() + i; }
  int ux(int i) const { return 3 * n_vertices() + 2 * i; }
  int uy(int i) const { return 3 * n_vertices() + 2 * i + 1; }

  bool constrained(int row) const { return kind_[row] != RowKind::free_row; }
  bool beam_vertex(int i) const { return beam_vertex_[i]; }
  bool insulator_vertex(int i) const { return insulator_vertex_[i]; }

  /// Zeroes the constrained components; the operator's porosity derivative
  /// has empty rows there because replaced rows carry no coefficients.
  Vec mask(const Vec& x) const {
    Vec y = x;
    for (int r = 0; r < n_state(); ++r)
      if (kind_[r] != RowKind::free_row) y[r] = 0.0;
    return y;
  }

  /// Assembles A(phi), b(phi). With constrain=false the raw weak-form rows are
  /// kept everywhere (used by the energy-balance diagnostics).
  std::pair<SpMat, Vec> assemble(const Vec& phi, bool constrain = true) const {
    check_phi(phi);
    const Mesh& mesh = *mesh_;
    const int n = mesh.n_vertices();
    const int N = 5 * n;
    TripletList t;
    t.reserve(static_cast<std::size_t>(mesh.n_cells()) * 90);
    Vec b = Vec::Zero(N);

    auto add = [&](int r, int c, double v) {
      if (!constrain || kind_[r] == RowKind::free_row) t.add(r, c, v);
    };

    const double beta = p_.beta_T();
    for (const auto& c : mesh.cells) {
      const fem::TriGeom g = mesh.geom(c);
      const double area = g.area;
      const std::array<Eigen::Vector2d, 3> gr = {g.grad.col(0), g.grad.col(1), g.grad.col(2)};

      if (c.dom == Domain::insulator) {
        const double phi_c = (phi[c.v[0]] + phi[c.v[1]] + phi[c.v[2]]) / 3.0;
        const double ks = p_.kappa_s * (1.0 - phi_c);
        const double kf = p_.kappa_f * phi_c;
        for (int a = 0; a < 3; ++a)
          for (int bq = 0; bq < 3; ++bq) {
            const double kab = area * gr[a].dot(gr[bq]);
            add(ts(c.v[a]), ts(c.v[bq]), ks * kab);
            add(tf(c.v[a]), tf(c.v[bq]), kf * kab);
            // Interphase exchange, exact P1 mass.
            const double mab = area / 12.0 * (a == bq ? 2.0 : 1.0);
            add(ts(c.v[a]), ts(c.v[bq]), p_.h * mab);
            add(ts(c.v[a]), tf(c.v[bq]), -p_.h * mab);
            add(tf(c.v[a]), tf(c.v[bq]), p_.h * mab);
            add(tf(c.v[a]), ts(c.v[bq]), -p_.h * mab);
          }
      } else {
        for (int a = 0; a < 3; ++a)
          for (int bq = 0; bq < 3; ++bq)
            add(tb(c.v[a]), tb(c.v[bq]), p_.kappa_b * area * gr[a].dot(gr[bq]));
      }

      // Elasticity on every cell; porosity enters only the insulator lambda.
      double lam, mu;
      if (c.dom == Domain::insulator) {
        const double phi_c = (phi[c.v[0]] + phi[c.v[1]] + phi[c.v[2]]) / 3.0;
        lam = p_.lame_eff(p_.lambda, p_.mu) + (1.0 - 2.0 * phi_c) / p_.D;
        mu = p_.mu;
      } else {
        lam = p_.lame_eff(p_.lambda_b, p_.mu_b);
        mu = p_.mu_b;
      }
      for (int a = 0; a < 3; ++a)
        for (int bq = 0; bq < 3; ++bq)
          for (int ca = 0; ca < 2; ++ca)
            for (int cb = 0; cb < 2; ++cb) {
              // div-div (lambda) + symmetric-gradient (mu) parts.
              double v = lam * gr[a][ca] * gr[bq][cb];
              v += mu * ((ca == cb ? gr[a].dot(gr[bq]) : 0.0) + gr[a][cb] * gr[bq][ca]);
              add(udof(c.v[a], ca), udof(c.v[bq], cb), area * v);
            }

      if (c.dom == Domain::beam) {
        // Thermal stress: -beta (theta_b - theta_0) I against the test strain.
        for (int a = 0; a < 3; ++a)
          for (int ca = 0; ca < 2; ++ca) {
            for (int j = 0; j < 3; ++j)
              add(udof(c.v[a], ca), tb(c.v[j]), -beta * area / 3.0 * gr[a][ca]);
            b[udof(c.v[a], ca)] += apply_row(udof(c.v[a], ca), constrain)
                                       ? -beta * p_.theta_0 * area * gr[a][ca]
                                       : 0.0;
          }
      }
    }

    for (const auto& e : mesh.edges) {
      const double len = mesh.edge_length(e);
      if (e.tag == Tag::G1 || e.tag == Tag::G4) {
        const double amb = (e.tag == Tag::G1) ? p_.theta_amb1 : p_.theta_amb4;
        const double w0s = 1.0 - phi[e.v[0]], w1s = 1.0 - phi[e.v[1]];
        const double w0f = phi[e.v[0]], w1f = phi[e.v[1]];
        auto robin = [&](int r0, int r1, double w0, double w1) {
          add(r0, r0, p_.h_air * len / 12.0 * (3.0 * w0 + w1));
          add(r0, r1, p_.h_air * len / 12.0 * (w0 + w1));
          add(r1, r0, p_.h_air * len / 12.0 * (w0 + w1));
          add(r1, r1, p_.h_air * len / 12.0 * (w0 + 3.0 * w1));
          if (apply_row(r0, constrain)) b[r0] += p_.h_air * amb * len / 6.0 * (2.0 * w0 + w1);
          if (apply_row(r1, constrain)) b[r1] += p_.h_air * amb * len / 6.0 * (w0 + 2.0 * w1);
        };
        robin(ts(e.v[0]), ts(e.v[1]), w0s, w1s);
        robin(tf(e.v[0]), tf(e.v[1]), w0f, w1f);
      } else if (e.tag == Tag::G3) {
        add(tb(e.v[0]), tb(e.v[0]), p_.h_air * len / 3.0);
        add(tb(e.v[0]), tb(e.v[1]), p_.h_air * len / 6.0);
        add(tb(e.v[1]), tb(e.v[0]), p_.h_air * len / 6.0);
        add(tb(e.v[1]), tb(e.v[1]), p_.h_air * len / 3.0);
        for (int v : e.v)
          if (apply_row(tb(v), constrain)) b[tb(v)] += p_.h_air * p_.theta_amb3 * len / 2.0;
      } else if (e.tag == Tag::G2) {
        for (int v : e.v)
          for (int ca = 0; ca < 2; ++ca)
            if (apply_row(udof(v, ca), constrain)) b[udof(v, ca)] += p_.traction[ca] * len / 2.0;
      }
    }

    if (constrain) {
      for (int r = 0; r < N; ++r) {
        if (kind_[r] == RowKind::fixed) {
          t.add(r, r, 1.0);
          b[r] = value_[r];
        } else if (kind_[r] == RowKind::trace) {
          t.add(r, r, 1.0);
          t.add(r, peer_[r], -1.0);
          b[r] = 0.0;
        }
      }
    }
    return {t.build(N, N), b};
  }

  /// Factorizes the two diagonal blocks of A(phi). Exactly two sparse
  /// factorizations; transposed solves reuse both.
  Factorization factorize(const Vec& phi) const {
    Factorization f;
    f.n = n_vertices();
    std::tie(f.A, f.b) = assemble(phi);
    const int nt = 3 * f.n, nm = 2 * f.n;
    SpMat At(f.A.block(0, 0, nt, nt));
    SpMat Am(f.A.block(nt, nt, nm, nm));
    f.coupling = f.A.block(nt, 0, nm, nt);
    f.thermal.factorize(At);
    f.mech.factorize(Am);
    return f;
  }

  Vec solve_state(const Vec& phi) const { return factorize(phi).solve_state(); }

  Vec residual(const Vec& u, const Vec& phi, bool constrain = true) const {
    auto [A, b] = assemble(phi, constrain);
    return A * u - b;
  }

  // --- Porosity sensitivities -----------------------------------------------
  //
  // A(phi) and b(phi) are affine in the nodal porosity. The kernels below
  // evaluate, without assembling derivative matrices,
  //   direction:  dA(dphi) x - [with_rhs] db(dphi)   (rows masked),
  //   transposed: dA(dphi)^T y                        (y masked first),
  //   pairing:    k -> y^T (dA_k x - [with_rhs] db_k) (y masked first).
  // The unconstrained derivative blocks are symmetric, so the transposed
  // action reuses the forward kernel on the masked vector.

  Vec dstate_op(const Vec& dphi, const Vec& x, bool with_rhs) const {
    return mask(raw_sensitivity_dir(dphi, x, with_rhs));
  }

  Vec dstate_op_transposed(const Vec& dphi, const Vec& y) const {
    return raw_sensitivity_dir(dphi, mask(y), false);
  }

  Vec phi_pairing(const Vec& x, const Vec& y, bool with_rhs) const {
    return raw_pairing(x, mask(y), with_rhs);
  }

 private:
  int udof(int v, int comp) const { return 3 * n_vertices() + 2 * v + comp; }

  bool apply_row(int r, bool constrain) const {
    return !constrain || kind_[r] == RowKind::free_row;
  }

  void check_phi(const Vec& phi) const {
    if (phi.size() != n_vertices()) throw ConfigError("porosity field size does not match mesh");
  }

  /// dA(dphi) x - [with_rhs] db(dphi), unmasked.
  Vec raw_sensitivity_dir(const Vec& dphi, const Vec& x, bool with_rhs) const {
    const Mesh& mesh = *mesh_;
    if (dphi.size() != n_vertices() || x.size() != n_state())
      throw ConfigError("sensitivity kernel: size mismatch");
    Vec out = Vec::Zero(n_state());

    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      const double area = g.area;
      const std::array<Eigen::Vector2d, 3> gr = {g.grad.col(0), g.grad.col(1), g.grad.col(2)};
      const double dphi_c = (dphi[c.v[0]] + dphi[c.v[1]] + dphi[c.v[2]]) / 3.0;

      Eigen::Vector2d gxs = Eigen::Vector2d::Zero(), gxf = Eigen::Vector2d::Zero();
      double divx = 0.0;
      for (int a = 0; a < 3; ++a) {
        gxs += gr[a] * x[ts(c.v[a])];
        gxf += gr[a] * x[tf(c.v[a])];
        divx += gr[a][0] * x[ux(c.v[a])] + gr[a][1] * x[uy(c.v[a])];
      }
      for (int a = 0; a < 3; ++a) {
        out[ts(c.v[a])] += -p_.kappa_s * dphi_c * area * gr[a].dot(gxs);
        out[tf(c.v[a])] += p_.kappa_f * dphi_c * area * gr[a].dot(gxf);
        const double dlam = -2.0 * dphi_c / p_.D;
        out[ux(c.v[a])] += dlam * area * gr[a][0] * divx;
        out[uy(c.v[a])] += dlam * area * gr[a][1] * divx;
      }
    }

    for (const auto& e : mesh.edges) {
      if (e.tag != Tag::G1 && e.tag != Tag::G4) continue;
      const double len = mesh.edge_length(e);
      const double amb = (e.tag == Tag::G1) ? p_.theta_amb1 : p_.theta_amb4;
      const double d0 = dphi[e.v[0]], d1 = dphi[e.v[1]];
      auto robin_dir = [&](int r0, int r1, double sgn) {
        // d/dw of len/12 [3w0+w1, w0+w1; w0+w1, w0+3w1] in direction (d0,d1).
        const double m00 = len / 12.0 * (3.0 * d0 + d1);
        const double m01 = len / 12.0 * (d0 + d1);
        const double m11 = len / 12.0 * (d0 + 3.0 * d1);
        out[r0] += sgn * p_.h_air * (m00 * x[r0] + m01 * x[r1]);
        out[r1] += sgn * p_.h_air * (m01 * x[r0] + m11 * x[r1]);
        if (with_rhs) {
          out[r0] -= sgn * p_.h_air * amb * len / 6.0 * (2.0 * d0 + d1);
          out[r1] -= sgn * p_.h_air * amb * len / 6.0 * (d0 + 2.0 * d1);
        }
      };
      robin_dir(ts(e.v[0]), ts(e.v[1]), -1.0);
      robin_dir(tf(e.v[0]), tf(e.v[1]), 1.0);
    }
    return out;
  }

  /// k -> y^T (dA_k x - [with_rhs] db_k), unmasked in y.
  Vec raw_pairing(const Vec& x, const Vec& y, bool with_rhs) const {
    const Mesh& mesh = *mesh_;
    if (x.size() != n_state() || y.size() != n_state())
      throw ConfigError("sensitivity kernel: size mismatch");
    Vec out = Vec::Zero(n_vertices());

    for (const auto& c : mesh.cells) {
      if (c.dom != Domain::insulator) continue;
      const fem::TriGeom g = mesh.geom(c);
      const double area = g.area;
      const std::array<Eigen::Vector2d, 3> gr = {g.grad.col(0), g.grad.col(1), g.grad.col(2)};

      Eigen::Vector2d gxs = Eigen::Vector2d::Zero(), gxf = Eigen::Vector2d::Zero();
      Eigen::Vector2d gys = Eigen::Vector2d::Zero(), gyf = Eigen::Vector2d::Zero();
      double divx = 0.0, divy = 0.0;
      for (int a = 0; a < 3; ++a) {
        gxs += gr[a] * x[ts(c.v[a])];
        gxf += gr[a] * x[tf(c.v[a])];
        gys += gr[a] * y[ts(c.v[a])];
        gyf += gr[a] * y[tf(c.v[a])];
        divx += gr[a][0] * x[ux(c.v[a])] + gr[a][1] * x[uy(c.v[a])];
        divy += gr[a][0] * y[ux(c.v[a])] + gr[a][1] * y[uy(c.v[a])];
      }
      const double cell_val = area / 3.0 * (-p_.kappa_s * gys.dot(gxs) + p_.kappa_f * gyf.dot(gxf) -
                                            2.0 / p_.D * divy * divx);
      for (int a = 0; a < 3; ++a) out[c.v[a]] += cell_val;
    }

    for (const auto& e : mesh.edges) {
      if (e.tag != Tag::G1 && e.tag != Tag::G4) continue;
      const double len = mesh.edge_length(e);
      const double amb = (e.tag == Tag::G1) ? p_.theta_amb1 : p_.theta_amb4;
      auto robin_pair = [&](int r0, int r1, double sgn) {
        // Derivative of the edge matrix w.r.t. each endpoint weight.
        const double q00 = y[r0] * x[r0], q01 = y[r0] * x[r1] + y[r1] * x[r0], q11 = y[r1] * x[r1];
        double g0 = len / 12.0 * (3.0 * q00 + q01 + q11);
        double g1 = len / 12.0 * (q00 + q01 + 3.0 * q11);
        if (with_rhs) {
          g0 -= amb * len / 6.0 * (2.0 * y[r0] + y[r1]);
          g1 -= amb * len / 6.0 * (y[r0] + 2.0 * y[r1]);
        }
        out[e.v[0]] += sgn * p_.h_air * g0;
        out[e.v[1]] += sgn * p_.h_air * g1;
      };
      robin_pair(ts(e.v[0]), ts(e.v[1]), -1.0);
      robin_pair(tf(e.v[0]), tf(e.v[1]), 1.0);
    }
    return out;
  }

  const Mesh* mesh_;
  MaterialParams p_;
  std::vector<RowKind> kind_;
  std::vector<double> value_;
  std::vector<int> peer_;
  std::vector<bool> beam_vertex_, insulator_vertex_;
};

/// Pore pressure recovered from the eliminated constitutive relation
/// p = -div(u_s)/D, cellwise constant.
inline Vec pore_pressure(const ForwardModel& fm, const Vec& u) {
  const Mesh& mesh = fm.mesh();
  Vec p = Vec::Zero(mesh.n_cells());
  for (int ci = 0; ci < mesh.n_cells(); ++ci) {
    const Cell& c = mesh.cells[ci];
    if (c.dom != Domain::insulator) continue;
    const fem::TriGeom g = mesh.geom(c);
    double div = 0.0;
    for (int a = 0; a < 3; ++a)
      div += g.grad.col(a)[0] * u[fm.ux(c.v[a])] + g.grad.col(a)[1] * u[fm.uy(c.v[a])];
    p[ci] = -div / fm.params().D;
  }
  return p;
}

}  // namespace poropt::model
