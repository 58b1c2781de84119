#pragma once

#include <array>
#include <functional>
#include <optional>
#include <set>

#include "poropt/mesh.hpp"
#include "poropt/sparse.hpp"

namespace poropt::fem {

// Quadrature used throughout:
//  - centroid rule: exact for integrands linear over a triangle,
//  - mid-edge 3-point rule: exact for quadratics (mass matrices, N_k-weighted
//    gradient products),
//  - 2-point Gauss on edges: exact for cubics (Robin terms with a P1
//    coefficient field).
inline constexpr std::array<std::array<double, 3>, 3> kMidEdge = {{
    {0.5, 0.5, 0.0}, {0.0, 0.5, 0.5}, {0.5, 0.0, 0.5}}};

inline constexpr std::array<double, 2> kEdgeGauss = {
    0.5 - 0.28867513459481287, 0.5 + 0.28867513459481287};

/// P1 scalar mass matrix, optionally restricted to one subdomain.
inline SpMat mass_matrix(const Mesh& mesh, std::optional<Domain> dom = std::nullopt) {
  TripletList t;
  for (const auto& c : mesh.cells) {
    if (dom && c.dom != *dom) continue;
    const TriGeom g = mesh.geom(c);
    const double w = g.area / 3.0;
    for (const auto& q : kMidEdge)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          t.add(c.v[a], c.v[b], w * q[a] * q[b]);
  }
  return t.build(mesh.n_vertices(), mesh.n_vertices());
}

/// Row-sum lumped mass vector (nodal areas).
inline Vec lumped_mass(const Mesh& mesh, std::optional<Domain> dom = std::nullopt) {
  Vec m = Vec::Zero(mesh.n_vertices());
  for (const auto& c : mesh.cells) {
    if (dom && c.dom != *dom) continue;
    const double w = mesh.geom(c).area / 3.0;
    for (int a = 0; a < 3; ++a) m[c.v[a]] += w;
  }
  return m;
}

/// Anisotropic P1 stiffness integral(grad v . Theta grad u), optionally on one
/// subdomain. Gradients are cellwise constant, so the centroid rule is exact.
inline SpMat stiffness_matrix(const Mesh& mesh, const Eigen::Matrix2d& Theta,
                              std::optional<Domain> dom = std::nullopt) {
  TripletList t;
  for (const auto& c : mesh.cells) {
    if (dom && c.dom != *dom) continue;
    const TriGeom g = mesh.geom(c);
    for (int a = 0; a < 3; ++a) {
      const Eigen::Vector2d tg = Theta * g.grad.col(a);
      for (int b = 0; b < 3; ++b)
        t.add(c.v[b], c.v[a], g.area * g.grad.col(b).dot(tg));
    }
  }
  return t.build(mesh.n_vertices(), mesh.n_vertices());
}

inline SpMat stiffness_matrix(const Mesh& mesh, std::optional<Domain> dom = std::nullopt) {
  return stiffness_matrix(mesh, Eigen::Matrix2d::Identity(), dom);
}

/// Boundary mass integral(u v) over edges carrying one of the given tags.
/// Throws if a requested tag has no edges (kernel referencing an untagged
/// region is a setup bug, not a silent no-op).
inline SpMat boundary_mass(const Mesh& mesh, const std::set<Tag>& tags) {
  std::set<Tag> seen;
  TripletList t;
  for (const auto& e : mesh.edges) {
    if (!tags.count(e.tag)) continue;
    seen.insert(e.tag);
    const double len = mesh.edge_length(e);
    // Exact 1D P1 mass on the edge: len/6 * [2 1; 1 2].
    t.add(e.v[0], e.v[0], len / 3.0);
    t.add(e.v[1], e.v[1], len / 3.0);
    t.add(e.v[0], e.v[1], len / 6.0);
    t.add(e.v[1], e.v[0], len / 6.0);
  }
  for (Tag tag : tags)
    if (!seen.count(tag))
      throw AssemblyError("boundary_mass: no edges carry tag " +
                          std::to_string(static_cast<int>(tag)));
  return t.build(mesh.n_vertices(), mesh.n_vertices());
}

/// Boundary mass over the entire boundary, whatever the tags.
inline SpMat boundary_mass(const Mesh& mesh) {
  std::set<Tag> present;
  for (const auto& e : mesh.edges) present.insert(e.tag);
  return boundary_mass(mesh, present);
}

/// Nodal interpolation of a coefficient field at a barycentric point.
inline double at_bary(const Vec& nodal, const Cell& c, const std::array<double, 3>& q) {
  return q[0] * nodal[c.v[0]] + q[1] * nodal[c.v[1]] + q[2] * nodal[c.v[2]];
}

/// Cellwise-constant gradient of a P1 nodal field.
inline Eigen::Vector2d grad_at(const Vec& nodal, const Cell& c, const TriGeom& g) {
  return nodal[c.v[0]] * g.grad.col(0) + nodal[c.v[1]] * g.grad.col(1) +
         nodal[c.v[2]] * g.grad.col(2);
}

}  // namespace poropt::fem
