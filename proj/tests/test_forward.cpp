#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "poropt/model.hpp"
#include "poropt/qoi.hpp"
#include "poropt/rng.hpp"

using namespace poropt;
using namespace poropt::model;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Vec uniform_phi(const Mesh& mesh, double v) { return Vec::Constant(mesh.n_vertices(), v); }

// Smooth nonuniform porosity in (0.3, 0.8), no symmetry.
Vec wavy_phi(const Mesh& mesh) {
  Vec phi(mesh.n_vertices());
  for (int i = 0; i < mesh.n_vertices(); ++i) {
    const auto& p = mesh.xy[i];
    phi[i] = 0.55 + 0.2 * std::sin(2.3 * p.x() + 0.7) * std::cos(1.9 * p.y() - 0.3);
  }
  return phi;
}

// Exact integral of (theta_s - theta_f)^2 over the insulator for P1 fields.
double interphase_gap_energy(const ForwardModel& fm, const Vec& u) {
  const Mesh& mesh = fm.mesh();
  double e = 0.0;
  for (const auto& c : mesh.cells) {
    if (c.dom != Domain::insulator) continue;
    const double area = mesh.geom(c).area;
    double d[3];
    for (int a = 0; a < 3; ++a) d[a] = u[fm.ts(c.v[a])] - u[fm.tf(c.v[a])];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) e += area / 12.0 * (a == b ? 2.0 : 1.0) * d[a] * d[b];
  }
  return e;
}

Vec random_state(const ForwardModel& fm, std::uint64_t seed, double scale = 1.0) {
  GaussianSampler g(seed);
  return scale * g.vector(fm.n_state());
}

Vec random_nodal(const ForwardModel& fm, std::uint64_t seed) {
  GaussianSampler g(seed);
  return g.vector(fm.n_vertices());
}

}  // namespace

TEST_CASE("uniform ambient temperature is reproduced exactly and leaves the body unloaded") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 12, 12);
  MaterialParams p;
  p.theta_amb1 = p.theta_amb3 = p.theta_amb4 = 293.0;
  ForwardModel fm(mesh, p);
  Vec u = fm.solve_state(wavy_phi(mesh));
  for (int i = 0; i < mesh.n_vertices(); ++i) {
    CHECK_THAT(u[fm.ts(i)], WithinAbs(293.0, 1e-8));
    CHECK_THAT(u[fm.tf(i)], WithinAbs(293.0, 1e-8));
    CHECK_THAT(u[fm.tb(i)], WithinAbs(293.0, 1e-8));
  }
  CHECK(u.tail(2 * mesh.n_vertices()).lpNorm<Eigen::Infinity>() < 1e-14);
  Vec vm = von_mises_field(fm, u);
  CHECK(vm.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("insulated beam strip settles at the hot ambient") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 16, 16);
  ForwardModel fm(mesh, MaterialParams{});
  Vec u = fm.solve_state(uniform_phi(mesh, 0.7));
  // The beam exchanges heat only through its top boundary, so its steady
  // temperature is the ambient above it.
  for (int i = 0; i < mesh.n_vertices(); ++i)
    if (fm.beam_vertex(i)) CHECK_THAT(u[fm.tb(i)], WithinAbs(313.0, 1e-8));
  // Trace rows tie the insulator temperatures to the beam at the interface.
  for (int i = 0; i < mesh.n_vertices(); ++i)
    if (fm.beam_vertex(i)) {
      CHECK_THAT(u[fm.ts(i)], WithinAbs(u[fm.tb(i)], 1e-10));
      CHECK_THAT(u[fm.tf(i)], WithinAbs(u[fm.tb(i)], 1e-10));
    }
  // Insulator interior sits strictly between the two ambients.
  for (int i = 0; i < mesh.n_vertices(); ++i)
    if (!fm.beam_vertex(i)) {
      CHECK(((u[fm.ts(i)] > 292.999) && (u[fm.ts(i)] < 313.001)));
      CHECK_THAT(u[fm.tb(i)], WithinAbs(293.0, 1e-12));
    }
}

TEST_CASE("a large exchange coefficient locks the two phase temperatures together") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 12, 12);
  MaterialParams p;
  p.h = 1e10;
  ForwardModel fm(mesh, p);
  Vec u = fm.solve_state(wavy_phi(mesh));
  double gap = 0.0;
  for (int i = 0; i < mesh.n_vertices(); ++i)
    gap = std::max(gap, std::abs(u[fm.ts(i)] - u[fm.tf(i)]));
  CHECK(gap < 1e-6 * 20.0);
}

TEST_CASE("temperatures never see the mechanical data") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 12, 12);
  Vec phi = wavy_phi(mesh);
  MaterialParams p;
  ForwardModel fm0(mesh, p);
  Vec u0 = fm0.solve_state(phi);
  p.ubar3 = Eigen::Vector2d(2e-4, -3e-4);
  p.traction = Eigen::Vector2d(0.0, -1e6);
  ForwardModel fm1(mesh, p);
  Vec u1 = fm1.solve_state(phi);
  const int n = mesh.n_vertices();
  CHECK(u0.head(3 * n) == u1.head(3 * n));
  CHECK((u0.tail(2 * n) - u1.tail(2 * n)).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("constant-strain displacements are equilibrated inside each material") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  ForwardModel fm(mesh, MaterialParams{});
  const int n = mesh.n_vertices();
  Vec u = Vec::Zero(fm.n_state());
  for (int i = 0; i < n; ++i) {
    const auto& xy = mesh.xy[i];
    u[fm.tb(i)] = fm.params().theta_0;  // no thermal stress
    u[fm.ux(i)] = 1e-4 * xy.x() + 3e-5 * xy.y();
    u[fm.uy(i)] = -2e-5 * xy.x() + 7e-5 * xy.y();
  }
  Vec r = fm.residual(u, uniform_phi(mesh, 0.6), /*constrain=*/false);
  double interior_max = 0.0, global_max = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& xy = mesh.xy[i];
    const double m = std::max(std::abs(r[fm.ux(i)]), std::abs(r[fm.uy(i)]));
    global_max = std::max(global_max, m);
    const bool on_boundary =
        xy.x() < 1e-12 || xy.x() > 1.0 - 1e-12 || xy.y() < 1e-12 || xy.y() > 1.0 - 1e-12;
    const bool near_interface = std::abs(xy.y() - 0.75) < 1.0 / 8.0 - 1e-12;
    if (!on_boundary && !near_interface) interior_max = std::max(interior_max, m);
  }
  CHECK(global_max > 1.0);  // boundary rows do carry the constant-stress flux
  CHECK(interior_max < 1e-9 * global_max);
}

TEST_CASE("block-triangular solve matches a monolithic factorization") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  ForwardModel fm(mesh, MaterialParams{});
  Vec phi = wavy_phi(mesh);

  const long f0 = factorization_count();
  Factorization f = fm.factorize(phi);
  CHECK(factorization_count() - f0 == 2);

  LuSolver full;
  full.factorize(f.A);
  Vec r = random_state(fm, 41);

  const long s0 = pde_solve_count(), b0 = block_solve_count();
  Vec x_block = f.solve(r);
  CHECK(pde_solve_count() - s0 == 1);
  CHECK(block_solve_count() - b0 == 2);

  // The blocks carry wildly different scales (conduction ~1, elasticity ~1e9),
  // so agreement with the monolithic factorization is conditioning-limited;
  // structural errors would show up at O(1). Backward error pins accuracy.
  double norm_a = 0.0;
  {
    Vec row_sum = Vec::Zero(f.A.rows());
    for (int k = 0; k < f.A.outerSize(); ++k)
      for (SpMat::InnerIterator it(f.A, k); it; ++it) row_sum[it.row()] += std::abs(it.value());
    norm_a = row_sum.maxCoeff();
  }
  Vec x_full = full.solve(r);
  CHECK((x_block - x_full).norm() < 1e-6 * x_full.norm());
  CHECK((f.A * x_block - r).norm() < 1e-12 * (norm_a * x_block.norm() + r.norm()));

  Vec y_block = f.solve_transposed(r);
  Vec y_full = full.solve_transposed(r);
  CHECK((y_block - y_full).norm() < 1e-6 * y_full.norm());
  CHECK((SpMat(f.A.transpose()) * y_block - r).norm() <
        1e-12 * (norm_a * y_block.norm() + r.norm()));

  Vec u = f.solve_state();
  CHECK((f.A * u - f.b).norm() < 1e-8 * f.b.norm());
}

TEST_CASE("energy balance ties the compliance to the interface reactions") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 16, 16);
  ForwardModel fm(mesh, MaterialParams{});
  Vec phi = wavy_phi(mesh);
  Vec u = fm.solve_state(phi);

  ThermalCompliance qoi(fm);
  const double Q = qoi.value(u, phi);
  CHECK(Q > 0.0);

  // Test the weak form with the solution itself: twice the compliance equals
  // the heat drawn through the replaced trace rows minus the exchange loss.
  Vec rho = fm.residual(u, phi, /*constrain=*/false);
  double reaction = 0.0;
  for (int i = 0; i < mesh.n_vertices(); ++i)
    if (fm.beam_vertex(i)) reaction += rho[fm.ts(i)] * u[fm.ts(i)] + rho[fm.tf(i)] * u[fm.tf(i)];
  const double expected = reaction - fm.params().h * interphase_gap_energy(fm, u);
  CHECK_THAT(2.0 * Q, WithinRel(expected, 1e-8));
}

TEST_CASE("higher porosity insulates better") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 16, 16);
  ForwardModel fm(mesh, MaterialParams{});
  ThermalCompliance qoi(fm);
  double prev = std::numeric_limits<double>::infinity();
  for (double v : {0.3, 0.5, 0.7, 0.9}) {
    Vec phi = uniform_phi(mesh, v);
    const double Q = qoi.value(fm.solve_state(phi), phi);
    CHECK(Q < prev);
    prev = Q;
  }
}

TEST_CASE("porosity map is a shifted logistic") {
  Vec d(3), m(3);
  d << 0.0, 1.2, std::log(9.0);
  m << 0.0, -1.2, 0.0;
  Vec phi = porosity(d, m);
  CHECK_THAT(phi[0], WithinAbs(0.5, 1e-15));
  CHECK_THAT(phi[1], WithinAbs(0.5, 1e-15));
  CHECK_THAT(phi[2], WithinRel(0.9, 1e-12));
  Vec phi_neg = porosity(Vec(-d), Vec(-m));
  for (int i = 0; i < 3; ++i) CHECK_THAT(phi[i] + phi_neg[i], WithinAbs(1.0, 1e-14));
  CHECK_THROWS_AS(porosity(d, Vec::Zero(2)), ConfigError);
}

TEST_CASE("von Mises invariant on canonical stress states") {
  CHECK_THAT(von_mises_3(5.0, 0.0, 0.0, 0.0), WithinRel(5.0, 1e-14));
  CHECK_THAT(von_mises_3(0.0, 0.0, 0.0, 2.0), WithinRel(2.0 * std::sqrt(3.0), 1e-14));
  CHECK_THAT(von_mises_3(7.0, 7.0, 7.0, 0.0), WithinAbs(0.0, 1e-12));
  CHECK_THAT(von_mises_3(3.0, -3.0, 0.0, 0.0), WithinRel(3.0 * std::sqrt(3.0), 1e-14));
}

TEST_CASE("stress aggregation has the p-norm closed forms") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  const double area = mesh.domain_area(Domain::insulator);
  REQUIRE_THAT(area, WithinRel(0.75, 1e-12));

  Vec vm = Vec::Constant(mesh.n_cells(), 3.0e6);
  for (double p : {2.0, 8.0, 32.0}) {
    CHECK_THAT(p_norm_stress(mesh, vm, p), WithinRel(3.0e6 * std::pow(area, 1.0 / p), 1e-12));
  }

  // Scaling, monotonicity in p on a measure < 1, and the sharp-max limit.
  ForwardModel fm(mesh, MaterialParams{});
  Vec u = fm.solve_state(uniform_phi(mesh, 0.7));
  Vec field = von_mises_field(fm, u);
  CHECK_THAT(p_norm_stress(mesh, Vec(2.0 * field), 8.0),
             WithinRel(2.0 * p_norm_stress(mesh, field, 8.0), 1e-12));
  double vmax = 0.0;
  for (int ci = 0; ci < mesh.n_cells(); ++ci)
    if (mesh.cells[ci].dom == Domain::insulator) vmax = std::max(vmax, field[ci]);
  double prev = 0.0;
  for (double p : {2.0, 8.0, 32.0, 128.0}) {
    const double t = p_norm_stress(mesh, field, p);
    CHECK(t > prev);
    CHECK(t <= vmax * std::pow(area, 1.0 / p) * (1.0 + 1e-12));
    prev = t;
  }
  CHECK(prev > 0.9 * vmax);

  CHECK(p_norm_stress(mesh, Vec(Vec::Zero(mesh.n_cells())), 8.0) == 0.0);
  CHECK_THROWS_AS(p_norm_stress(mesh, vm, 1.0), ConfigError);
}

TEST_CASE("chance function orientation") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  ForwardModel fm(mesh, MaterialParams{});
  Vec phi = uniform_phi(mesh, 0.7);
  Vec u = fm.solve_state(phi);
  ChanceConfig cc;
  StressChance f_exc(fm, cc);
  cc.literal_sign = true;
  StressChance f_lit(fm, cc);

  const double margin = chance_function(fm, u, cc);
  CHECK_THAT(f_lit.value(u, phi), WithinRel(margin, 1e-12));
  CHECK_THAT(f_exc.value(u, phi), WithinRel(-margin, 1e-12));
  CHECK_THAT(f_exc.aggregated(u),
             WithinRel(p_norm_stress(mesh, von_mises_field(fm, u), cc.p_exponent), 1e-10));

  ChanceConfig bad;
  bad.alpha_c = 1.5;
  CHECK_THROWS_AS(StressChance(fm, bad), ConfigError);
}

TEST_CASE("pore pressure tracks the dilatation") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  ForwardModel fm(mesh, MaterialParams{});
  Vec u = Vec::Zero(fm.n_state());
  for (int i = 0; i < mesh.n_vertices(); ++i) {
    u[fm.ux(i)] = 2e-4 * mesh.xy[i].x();
    u[fm.uy(i)] = -5e-5 * mesh.xy[i].y();
  }
  Vec p = pore_pressure(fm, u);
  for (int ci = 0; ci < mesh.n_cells(); ++ci) {
    if (mesh.cells[ci].dom == Domain::insulator)
      CHECK_THAT(p[ci], WithinRel(-(2e-4 - 5e-5) / fm.params().D, 1e-10));
    else
      CHECK(p[ci] == 0.0);
  }
}

TEST_CASE("porosity sensitivity kernels match the assembled affine dependence") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  ForwardModel fm(mesh, MaterialParams{});
  Vec phi = wavy_phi(mesh);
  Vec dphi = random_nodal(fm, 7);
  Vec x = random_state(fm, 8);
  Vec y = random_state(fm, 9);

  // The operator is affine in porosity, so a central difference of the
  // residual at frozen state is exact up to roundoff.
  const double eps = 1e-4;
  Vec rp = fm.residual(x, Vec(phi + eps * dphi));
  Vec rm = fm.residual(x, Vec(phi - eps * dphi));
  Vec fd = (rp - rm) / (2.0 * eps);
  Vec an = fm.dstate_op(dphi, x, /*with_rhs=*/true);
  CHECK((an - fd).norm() < 1e-8 * (fd.norm() + 1.0));

  // Transpose consistency: <y, dA x> = <x, dA^T y>.
  const double lhs = y.dot(fm.dstate_op(dphi, x, /*with_rhs=*/false));
  const double rhs = x.dot(fm.dstate_op_transposed(dphi, y));
  CHECK_THAT(lhs, WithinRel(rhs, 1e-11));

  // Nodal pairing sums back to the directional pairing.
  Vec pair = fm.phi_pairing(x, y, /*with_rhs=*/true);
  CHECK_THAT(pair.dot(dphi), WithinRel(y.dot(an), 1e-10));
}

namespace {

// Directional derivative check of a QoI u-derivative stack.
template <class Fn>
double central_diff(Fn&& fn, double h) {
  return (fn(h) - fn(-h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("thermal compliance derivative stack is consistent") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  ForwardModel fm(mesh, MaterialParams{});
  ThermalCompliance qoi(fm);
  Vec phi = wavy_phi(mesh);
  Vec u = fm.solve_state(phi);
  Vec x = random_state(fm, 21);
  Vec y = random_state(fm, 22);
  Vec dphi = random_nodal(fm, 23);

  // Quadratic in u: the Taylor expansion with the reported derivatives is exact.
  const double v0 = qoi.value(u, phi);
  const double v1 = qoi.value(Vec(u + x), phi);
  const double pred = v0 + qoi.grad_u(u, phi).dot(x) + 0.5 * x.dot(qoi.hess_u_apply(u, phi, x));
  CHECK_THAT(v1, WithinRel(pred, 1e-10));
  CHECK(qoi.third_u_apply(u, phi, x, y).norm() == 0.0);

  // Affine in phi: exact central differences.
  const double eps = 1e-4;
  const double dv_fd =
      central_diff([&](double h) { return qoi.value(u, Vec(phi + h * dphi)); }, eps);
  CHECK_THAT(qoi.grad_phi(u, phi).dot(dphi), WithinRel(dv_fd, 1e-9));

  Vec gp = qoi.grad_u(u, Vec(phi + eps * dphi));
  Vec gm = qoi.grad_u(u, Vec(phi - eps * dphi));
  Vec mixed_fd = (gp - gm) / (2.0 * eps);
  CHECK((qoi.mixed_dir(u, phi, dphi) - mixed_fd).norm() < 1e-9 * mixed_fd.norm());
  CHECK_THAT(qoi.mixed_adj(u, phi, x).dot(dphi),
             WithinRel(x.dot(qoi.mixed_dir(u, phi, dphi)), 1e-11));

  Vec hp = qoi.hess_u_apply(u, Vec(phi + eps * dphi), y);
  Vec hm = qoi.hess_u_apply(u, Vec(phi - eps * dphi), y);
  const double uu_fd = x.dot(hp - hm) / (2.0 * eps);
  CHECK_THAT(qoi.mixed_uu_pair(phi, x, y).dot(dphi), WithinRel(uu_fd, 1e-9));

  // Hessian symmetry.
  CHECK_THAT(x.dot(qoi.hess_u_apply(u, phi, y)),
             WithinRel(y.dot(qoi.hess_u_apply(u, phi, x)), 1e-11));
}

TEST_CASE("stress QoI derivative stack agrees with finite differences") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 8, 8);
  ForwardModel fm(mesh, MaterialParams{});
  Vec phi = uniform_phi(mesh, 0.7);
  Vec u = fm.solve_state(phi);
  StressChance qoi(fm, ChanceConfig{});

  GaussianSampler g(31);
  Vec x = g.vector(fm.n_state()) * (u.tail(2 * mesh.n_vertices()).norm() / std::sqrt(5.0 * mesh.n_vertices()));
  Vec y = g.vector(fm.n_state()) * (u.tail(2 * mesh.n_vertices()).norm() / std::sqrt(5.0 * mesh.n_vertices()));

  const double h = 1e-5;
  const double dfd =
      central_diff([&](double t) { return qoi.value(Vec(u + t * x), phi); }, h);
  const double dan = qoi.grad_u(u, phi).dot(x);
  CHECK_THAT(dan, WithinRel(dfd, 1e-6));

  Vec hfd = (qoi.grad_u(Vec(u + h * x), phi) - qoi.grad_u(Vec(u - h * x), phi)) / (2.0 * h);
  Vec han = qoi.hess_u_apply(u, phi, x);
  CHECK((han - hfd).norm() < 1e-5 * hfd.norm());
  CHECK_THAT(x.dot(qoi.hess_u_apply(u, phi, y)),
             WithinRel(y.dot(qoi.hess_u_apply(u, phi, x)), 1e-10));

  Vec tfd = (qoi.hess_u_apply(Vec(u + h * y), phi, x) - qoi.hess_u_apply(Vec(u - h * y), phi, x)) /
            (2.0 * h);
  Vec tan_ = qoi.third_u_apply(u, phi, x, y);
  CHECK((tan_ - tfd).norm() < 1e-4 * tfd.norm());

  // 1-homogeneity: value scales, gradient is invariant.
  CHECK_THAT(qoi.aggregated(Vec(3.0 * u)), WithinRel(3.0 * qoi.aggregated(u), 1e-11));
  CHECK((qoi.grad_u(Vec(3.0 * u), phi) - qoi.grad_u(u, phi)).norm() <
        1e-10 * qoi.grad_u(u, phi).norm());

  // All porosity partials vanish.
  CHECK(qoi.grad_phi(u, phi).norm() == 0.0);
  CHECK(qoi.mixed_dir(u, phi, x).norm() == 0.0);
}

TEST_CASE("reference scenario values stay pinned") {
  Mesh mesh = Mesh::structured(1.0, 1.0, 0.75, 16, 16);
  ForwardModel fm(mesh, MaterialParams{});
  Vec phi = uniform_phi(mesh, 0.7);
  Vec u = fm.solve_state(phi);

  Vec r = fm.residual(u, phi);
  auto [A, b] = fm.assemble(phi);
  CHECK(r.norm() < 1e-8 * b.norm());

  ThermalCompliance q(fm);
  StressChance f(fm, ChanceConfig{});
  // Frozen from the first verified run of this scenario; guards against silent
  // regressions of assembly, solve, and the two quantities of interest.
  CHECK_THAT(q.value(u, phi), WithinRel(3961.5277776368807, 1e-10));
  CHECK_THAT(f.aggregated(u), WithinRel(727548.85548541974, 1e-10));
}
