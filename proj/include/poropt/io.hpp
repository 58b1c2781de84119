#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poropt/errors.hpp"
#include "poropt/matern.hpp"
#include "poropt/mesh.hpp"
#include "poropt/model.hpp"
#include "poropt/optimizer.hpp"
#include "poropt/version.hpp"

namespace poropt::io {

using json = nlohmann::json;

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  try {
    return json::parse(in, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("config: '" + path + "': " + e.what());
  }
}

/// Dotted-path lookup; nullptr when any segment is absent.
inline const json* find(const json& root, const std::string& dotted) {
  const json* node = &root;
  std::size_t begin = 0;
  while (begin <= dotted.size()) {
    const std::size_t dot = dotted.find('.', begin);
    const std::string key = dotted.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &(*node)[key];
    if (dot == std::string::npos) return node;
    begin = dot + 1;
  }
  return nullptr;
}

template <class T>
T require(const json& root, const std::string& key) {
  const json* node = find(root, key);
  if (node == nullptr) throw ConfigError("config: missing key '" + key + "'");
  try {
    return node->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: key '" + key + "': " + e.what());
  }
}

template <class T>
T get_or(const json& root, const std::string& key, T fallback) {
  const json* node = find(root, key);
  if (node == nullptr) return fallback;
  try {
    return node->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: key '" + key + "': " + e.what());
  }
}

/// A nodal field given either as one number (constant) or a full array.
inline Vec nodal_field(const json& root, const std::string& key, int n, double fallback) {
  const json* node = find(root, key);
  if (node == nullptr) return Vec::Constant(n, fallback);
  if (node->is_number()) return Vec::Constant(n, node->get<double>());
  if (node->is_array()) {
    if (static_cast<int>(node->size()) != n)
      throw ConfigError("config: key '" + key + "': expected " + std::to_string(n) +
                        " entries, got " + std::to_string(node->size()));
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = (*node)[i].get<double>();
    return v;
  }
  throw ConfigError("config: key '" + key + "': expected number or array");
}

/// Everything a solver run needs, assembled from one JSON document. The
/// ForwardModel itself is built by the caller so that it can reference the
/// mesh stored here.
struct Problem {
  fem::Mesh mesh;
  model::MaterialParams material;
  field::MaternConfig field;
  model::ChanceConfig chance;
  opt::CostConfig cost;
  opt::ContinuationConfig continuation;
  Vec d0;
};

inline Problem parse_problem(const json& cfg) {
  Problem p{.mesh = fem::Mesh::structured(get_or(cfg, "mesh.width", 1.0),
                                          get_or(cfg, "mesh.height", 1.0),
                                          get_or(cfg, "mesh.beam_y0", 0.75),
                                          require<int>(cfg, "mesh.nx"),
                                          require<int>(cfg, "mesh.ny")),
            .material = {},
            .field = {},
            .chance = {},
            .cost = {},
            .continuation = {},
            .d0 = {}};
  const int n = p.mesh.n_vertices();

  model::MaterialParams& m = p.material;
  m.kappa_s = get_or(cfg, "material.kappa_s", m.kappa_s);
  m.kappa_f = get_or(cfg, "material.kappa_f", m.kappa_f);
  m.kappa_b = get_or(cfg, "material.kappa_b", m.kappa_b);
  m.h = get_or(cfg, "material.h", m.h);
  m.h_air = get_or(cfg, "material.h_air", m.h_air);
  m.theta_amb1 = get_or(cfg, "material.theta_amb1", m.theta_amb1);
  m.theta_amb3 = get_or(cfg, "material.theta_amb3", m.theta_amb3);
  m.theta_amb4 = get_or(cfg, "material.theta_amb4", m.theta_amb4);
  m.theta_0 = get_or(cfg, "material.theta_0", m.theta_0);
  m.D = get_or(cfg, "material.D", m.D);
  m.lambda = get_or(cfg, "material.lambda", m.lambda);
  m.mu = get_or(cfg, "material.mu", m.mu);
  m.lambda_b = get_or(cfg, "material.lambda_b", m.lambda_b);
  m.mu_b = get_or(cfg, "material.mu_b", m.mu_b);
  m.alpha_T = get_or(cfg, "material.alpha_T", m.alpha_T);
  m.plane_stress = get_or(cfg, "material.plane_stress", m.plane_stress);
  m.ubar1 = {get_or(cfg, "material.ubar1_x", 0.0), get_or(cfg, "material.ubar1_y", 0.0)};
  m.ubar3 = {get_or(cfg, "material.ubar3_x", 0.0), get_or(cfg, "material.ubar3_y", 0.0)};
  m.traction = {get_or(cfg, "material.traction_x", 0.0), get_or(cfg, "material.traction_y", 0.0)};
  m.validate();

  field::MaternConfig& fc = p.field;
  std::tie(fc.gamma, fc.delta) = field::params_from_stats(
      require<double>(cfg, "field.sigma"), require<double>(cfg, "field.corr_length"));
  fc.theta_x = get_or(cfg, "field.theta_x", fc.theta_x);
  fc.theta_y = get_or(cfg, "field.theta_y", fc.theta_y);
  fc.alpha_angle = get_or(cfg, "field.alpha_angle", fc.alpha_angle);
  fc.robin_coeff = get_or(cfg, "field.robin_coeff", fc.robin_coeff);
  fc.robin_length_form = get_or(cfg, "field.robin_length_form", fc.robin_length_form);
  fc.mean = nodal_field(cfg, "field.mean", n, 0.0);
  fc.validate();

  model::ChanceConfig& cc = p.chance;
  cc.T_cr = get_or(cfg, "chance.T_cr", cc.T_cr);
  cc.p_exponent = get_or(cfg, "chance.p_exponent", cc.p_exponent);
  cc.alpha_c = get_or(cfg, "chance.alpha_c", cc.alpha_c);
  cc.literal_sign = get_or(cfg, "chance.literal_sign", cc.literal_sign);
  cc.validate();

  opt::CostConfig& co = p.cost;
  co.beta_v = get_or(cfg, "cost.beta_v", co.beta_v);
  co.beta_r = get_or(cfg, "cost.beta_r", co.beta_r);
  co.chance = cc;
  co.gamma = get_or(cfg, "cost.gamma", co.gamma);
  co.omega = get_or(cfg, "cost.omega", co.omega);
  co.n_eig_q = get_or(cfg, "cost.n_eig_q", co.n_eig_q);
  co.n_eig_f = get_or(cfg, "cost.n_eig_f", co.n_eig_f);
  co.oversample = get_or(cfg, "cost.oversample", co.oversample);
  co.n_chance_samples = get_or(cfg, "cost.n_chance_samples", co.n_chance_samples);
  co.sample_seed = get_or<std::uint64_t>(cfg, "cost.sample_seed", co.sample_seed);
  co.sketch_seed = get_or<std::uint64_t>(cfg, "cost.sketch_seed", co.sketch_seed);
  co.validate();

  opt::ContinuationConfig& k = p.continuation;
  k.omega0 = get_or(cfg, "continuation.omega0", k.omega0);
  k.gamma0 = get_or(cfg, "continuation.gamma0", k.gamma0);
  k.sigma_omega = get_or(cfg, "continuation.sigma_omega", k.sigma_omega);
  k.sigma_gamma = get_or(cfg, "continuation.sigma_gamma", k.sigma_gamma);
  k.k_max = get_or(cfg, "continuation.k_max", k.k_max);
  k.tol_outer = get_or(cfg, "continuation.tol_outer", k.tol_outer);
  k.tol_inner = get_or(cfg, "continuation.tol_inner", k.tol_inner);
  k.max_inner = get_or(cfg, "continuation.max_inner", k.max_inner);
  k.max_cg = get_or(cfg, "continuation.max_cg", k.max_cg);
  k.armijo_c1 = get_or(cfg, "continuation.armijo_c1", k.armijo_c1);
  k.max_halvings = get_or(cfg, "continuation.max_halvings", k.max_halvings);
  k.fd_step = get_or(cfg, "continuation.fd_step", k.fd_step);
  k.report_samples = get_or(cfg, "continuation.report_samples", k.report_samples);
  k.validate();

  p.d0 = nodal_field(cfg, "design.initial", n, 0.5);
  return p;
}

/// Output directory with a deterministic manifest: no clocks, no host info,
/// just the echoed config, the produced files, and the solver counters.
class RunDir {
 public:
  explicit RunDir(std::string path) : root_(std::move(path)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw ConfigError("run dir: cannot create '" + root_ + "': " + ec.message());
  }

  const std::string& root() const { return root_; }

  std::string path(const std::string& name) const {
    return (std::filesystem::path(root_) / name).string();
  }

  void write_text(const std::string& name, const std::string& content) {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw ConfigError("run dir: cannot write '" + path(name) + "'");
    out << content;
    files_.push_back(name);
  }

  void write_json(const std::string& name, const json& j) {
    write_text(name, j.dump(2) + "\n");
  }

  /// Rows of JSON objects, one per line, written in one shot.
  void write_jsonl(const std::string& name, const std::vector<json>& rows) {
    std::string out;
    for (const json& row : rows) out += row.dump() + "\n";
    write_text(name, out);
  }

  void write_manifest(const json& config_echo, json extra = json::object()) {
    json m;
    m["version"] = version();
    m["config"] = config_echo;
    m["files"] = files_;
    m["counters"] = json{{"pde_solves", model::pde_solve_count().load()},
                         {"factorizations", factorization_count().load()}};
    m["extra"] = std::move(extra);
    write_json("manifest.json", m);
  }

 private:
  std::string root_;
  std::vector<std::string> files_;
};

inline std::string csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<double>>& rows) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw ConfigError("csv: ragged row");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
  return out.str();
}

}  // namespace poropt::io
