#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "poropt/errors.hpp"
#include "poropt/mesh.hpp"

namespace poropt::io {

/// Legacy-VTK (ASCII) writer for triangle meshes. Output is deterministic:
/// fixed %.17g formatting, no timestamps, fields emitted in insertion order.
class VtkWriter {
 public:
  explicit VtkWriter(const fem::Mesh& mesh, std::string title = "poropt")
      : mesh_(mesh), title_(std::move(title)) {}

  void add_point_scalar(const std::string& name, const Eigen::VectorXd& v) {
    if (v.size() != mesh_.n_vertices()) throw ConfigError("vtk: point scalar size mismatch");
    point_scalars_.emplace_back(name, v);
  }

  void add_point_vector2(const std::string& name, const Eigen::VectorXd& interleaved) {
    if (interleaved.size() != 2 * mesh_.n_vertices())
      throw ConfigError("vtk: point vector size mismatch");
    point_vectors_.emplace_back(name, interleaved);
  }

  void add_cell_scalar(const std::string& name, const Eigen::VectorXd& v) {
    if (v.size() != mesh_.n_cells()) throw ConfigError("vtk: cell scalar size mismatch");
    cell_scalars_.emplace_back(name, v);
  }

  std::string str() const {
    std::string out;
    out.reserve(1 << 20);
    out += "# vtk DataFile Version 3.0\n" + title_ + "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    append(out, "POINTS %d double\n", mesh_.n_vertices());
    for (const auto& p : mesh_.xy) append(out, "%.17g %.17g 0\n", p.x(), p.y());
    append(out, "CELLS %d %d\n", mesh_.n_cells(), 4 * mesh_.n_cells());
    for (const auto& c : mesh_.cells) append(out, "3 %d %d %d\n", c.v[0], c.v[1], c.v[2]);
    append(out, "CELL_TYPES %d\n", mesh_.n_cells());
    for (int i = 0; i < mesh_.n_cells(); ++i) out += "5\n";

    if (!point_scalars_.empty() || !point_vectors_.empty()) {
      append(out, "POINT_DATA %d\n", mesh_.n_vertices());
      for (const auto& [name, v] : point_scalars_) {
        out += "SCALARS " + name + " double 1\nLOOKUP_TABLE default\n";
        for (Eigen::Index i = 0; i < v.size(); ++i) append(out, "%.17g\n", v[i]);
      }
      for (const auto& [name, v] : point_vectors_) {
        out += "VECTORS " + name + " double\n";
        for (int i = 0; i < mesh_.n_vertices(); ++i)
          append(out, "%.17g %.17g 0\n", v[2 * i], v[2 * i + 1]);
      }
    }
    if (!cell_scalars_.empty()) {
      append(out, "CELL_DATA %d\n", mesh_.n_cells());
      for (const auto& [name, v] : cell_scalars_) {
        out += "SCALARS " + name + " double 1\nLOOKUP_TABLE default\n";
        for (Eigen::Index i = 0; i < v.size(); ++i) append(out, "%.17g\n", v[i]);
      }
    }
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("vtk: cannot open " + path);
    const std::string s = str();
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  template <typename... Args>
  static void append(std::string& out, const char* fmt, Args... args) {
    char buf[160];
    const int n = std::snprintf(buf, sizeof buf, fmt, args...);
    out.append(buf, static_cast<std::size_t>(n));
  }

  const fem::Mesh& mesh_;
  std::string title_;
  std::vector<std::pair<std::string, Eigen::VectorXd>> point_scalars_;
  std::vector<std::pair<std::string, Eigen::VectorXd>> point_vectors_;
  std::vector<std::pair<std::string, Eigen::VectorXd>> cell_scalars_;
};

/// Mesh with subdomain and boundary tags, for inspection in ParaView.
inline std::string mesh_vtk(const fem::Mesh& mesh) {
  VtkWriter w(mesh, "mesh");
  Eigen::VectorXd dom(mesh.n_cells());
  for (int i = 0; i < mesh.n_cells(); ++i)
    dom[i] = static_cast<double>(static_cast<int>(mesh.cells[i].dom));
  w.add_cell_scalar("subdomain", dom);
  Eigen::VectorXd tag = Eigen::VectorXd::Zero(mesh.n_vertices());
  for (const auto& e : mesh.edges)
    for (int v : e.v) tag[v] = static_cast<double>(static_cast<int>(e.tag));
  w.add_point_scalar("boundary_tag", tag);
  return w.str();
}

}  // namespace poropt::io
