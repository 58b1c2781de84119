#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poropt/errors.hpp"

namespace poropt::fem {

/// Boundary tags of the beam-insulator layout:
///   G1 bottom edge (insulator exterior), G3 top edge (beam exterior),
///   G2 beam-side verticals, G4 insulator-side verticals.
enum class Tag : int { G1 = 1, G2 = 2, G3 = 3, G4 = 4 };

enum class Domain : int { insulator = 0, beam = 1 };

struct Cell {
  std::array<int, 3> v;  // CCW vertex ids
  Domain dom;
};

struct Edge {
  std::array<int, 2> v;
  Tag tag;
};

/// Constant P1 element geometry of a triangle.
struct TriGeom {
  double area;
  Eigen::Matrix<double, 2, 3> grad;  // grad(N_a), columns per local vertex
  Eigen::Vector2d centroid;
};

/// Structured right-triangle mesh of [0,W]x[0,H] with a full-width beam strip
/// occupying y in [beam_y0, H]; the insulator fills y in [0, beam_y0].
class Mesh {
 public:
  double W = 1.0, H = 1.0, beam_y0 = 0.75;
  int nx = 16, ny = 16;
  std::vector<Eigen::Vector2d> xy;
  std::vector<Cell> cells;
  std::vector<Edge> edges;  // boundary edges only, each with exactly one tag

  int n_vertices() const { return static_cast<int>(xy.size()); }
  int n_cells() const { return static_cast<int>(cells.size()); }

  static Mesh structured(double W, double H, double beam_y0, int nx, int ny) {
    if (!(W > 0.0) || !(H > 0.0)) throw GeometryError("mesh: rectangle sides must be positive");
    if (nx < 1 || ny < 1) throw GeometryError("mesh: nx, ny must be >= 1");
    if (!(beam_y0 > 0.0) || !(beam_y0 < H))
      throw GeometryError("mesh: beam strip [beam_y0, H] must lie strictly inside (0, H)");
    const double hy = H / ny;
    const double snapped = std::round(beam_y0 / hy) * hy;
    if (std::abs(snapped - beam_y0) > 1e-9 * H)
      throw GeometryError("mesh: beam_y0 must align with a horizontal grid line (got " +
                          std::to_string(beam_y0) + ", spacing " + std::to_string(hy) + ")");
    if (snapped <= 0.0 || snapped >= H)
      throw GeometryError("mesh: beam strip collapses a subdomain");

    Mesh m;
    m.W = W; m.H = H; m.beam_y0 = snapped; m.nx = nx; m.ny = ny;
    m.xy.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i)
        m.xy.emplace_back(W * i / nx, H * j / ny);

    auto vid = [nx](int i, int j) { return i + j * (nx + 1); };
    m.cells.reserve(static_cast<std::size_t>(2 * nx * ny));
    for (int j = 0; j < ny; ++j) {
      const Domain dom = ((j + 0.5) * hy > snapped) ? Domain::beam : Domain::insulator;
      for (int i = 0; i < nx; ++i) {
        const int a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
        m.cells.push_back({{a, b, c}, dom});
        m.cells.push_back({{a, c, d}, dom});
      }
    }

    for (int i = 0; i < nx; ++i) {
      m.edges.push_back({{vid(i, 0), vid(i + 1, 0)}, Tag::G1});
      m.edges.push_back({{vid(i, ny), vid(i + 1, ny)}, Tag::G3});
    }
    for (int j = 0; j < ny; ++j) {
      const Tag side = ((j + 0.5) * hy > snapped) ? Tag::G2 : Tag::G4;
      m.edges.push_back({{vid(0, j), vid(0, j + 1)}, side});
      m.edges.push_back({{vid(nx, j), vid(nx, j + 1)}, side});
    }
    return m;
  }

  /// Plain rectangle without a beam strip (single insulator subdomain);
  /// bottom edge G1, top edge G3, both side edges G4.
  static Mesh rectangle(double W, double H, int nx, int ny) {
    if (!(W > 0.0) || !(H > 0.0)) throw GeometryError("mesh: rectangle sides must be positive");
    if (nx < 1 || ny < 1) throw GeometryError("mesh: nx, ny must be >= 1");
    Mesh m;
    m.W = W; m.H = H; m.beam_y0 = H; m.nx = nx; m.ny = ny;
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i)
        m.xy.emplace_back(W * i / nx, H * j / ny);
    auto vid = [nx](int i, int j) { return i + j * (nx + 1); };
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const int a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
        m.cells.push_back({{a, b, c}, Domain::insulator});
        m.cells.push_back({{a, c, d}, Domain::insulator});
      }
    for (int i = 0; i < nx; ++i) {
      m.edges.push_back({{vid(i, 0), vid(i + 1, 0)}, Tag::G1});
      m.edges.push_back({{vid(i, ny), vid(i + 1, ny)}, Tag::G3});
    }
    for (int j = 0; j < ny; ++j) {
      m.edges.push_back({{vid(0, j), vid(0, j + 1)}, Tag::G4});
      m.edges.push_back({{vid(nx, j), vid(nx, j + 1)}, Tag::G4});
    }
    return m;
  }

  TriGeom geom(const Cell& c) const {
    const auto& p0 = xy[c.v[0]];
    const auto& p1 = xy[c.v[1]];
    const auto& p2 = xy[c.v[2]];
    Eigen::Matrix2d J;
    J.col(0) = p1 - p0;
    J.col(1) = p2 - p0;
    const double det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
    TriGeom g;
    g.area = 0.5 * std::abs(det);
    Eigen::Matrix<double, 2, 3> ref;  // reference gradients of N0, N1, N2
    ref << -1.0, 1.0, 0.0,
           -1.0, 0.0, 1.0;
    g.grad = J.transpose().inverse() * ref;
    g.centroid = (p0 + p1 + p2) / 3.0;
    return g;
  }

  double edge_length(const Edge& e) const { return (xy[e.v[1]] - xy[e.v[0]]).norm(); }

  /// Vertices shared by at least one insulator and one beam cell.
  std::vector<int> interface_vertices() const {
    std::vector<char> in_ins(xy.size(), 0), in_beam(xy.size(), 0);
    for (const auto& c : cells) {
      auto& mark = (c.dom == Domain::insulator) ? in_ins : in_beam;
      for (int v : c.v) mark[v] = 1;
    }
    std::vector<int> out;
    for (int v = 0; v < n_vertices(); ++v)
      if (in_ins[v] && in_beam[v]) out.push_back(v);
    return out;
  }

  /// Vertices touching at least one cell of the given subdomain.
  std::vector<char> domain_vertex_mask(Domain dom) const {
    std::vector<char> mask(xy.size(), 0);
    for (const auto& c : cells)
      if (c.dom == dom)
        for (int v : c.v) mask[v] = 1;
    return mask;
  }

  std::vector<int> boundary_vertices(Tag tag) const {
    std::vector<char> mark(xy.size(), 0);
    for (const auto& e : edges)
      if (e.tag == tag) mark[e.v[0]] = mark[e.v[1]] = 1;
    std::vector<int> out;
    for (int v = 0; v < n_vertices(); ++v)
      if (mark[v]) out.push_back(v);
    return out;
  }

  double domain_area(Domain dom) const {
    double a = 0.0;
    for (const auto& c : cells)
      if (c.dom == dom) a += geom(c).area;
    return a;
  }
};

}  // namespace poropt::fem
