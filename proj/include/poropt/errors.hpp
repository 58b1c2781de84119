#pragma once

#include <stdexcept>
#include <string>

namespace poropt {

/// Invalid or inconsistent run configuration (bad key, bad value, bad geometry).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Mesh or subdomain layout that cannot be built (beam outside rectangle, ...).
class GeometryError : public std::runtime_error {
 public:
  explicit GeometryError(const std::string& what) : std::runtime_error(what) {}
};

/// A kernel referenced a tag or subdomain absent from the mesh.
class AssemblyError : public std::runtime_error {
 public:
  explicit AssemblyError(const std::string& what) : std::runtime_error(what) {}
};

/// Factorization or solve failure; message carries the backend diagnostics.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

/// A verification suite (finite-difference or oracle comparison) failed.
class VerificationError : public std::runtime_error {
 public:
  explicit VerificationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace poropt
