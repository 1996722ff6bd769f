#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace geovar {

enum class ModelId { H2, H3, E2, SPinch };

inline const char* to_string(ModelId m) {
  switch (m) {
    case ModelId::H2: return "h2";
    case ModelId::H3: return "h3";
    case ModelId::E2: return "e2";
    case ModelId::SPinch: return "spinch";
  }
  return "?";
}

enum class Errc {
  model_mismatch,
  base_mismatch,
  not_tangent,
  out_of_chart,
  bvp_nonconvergence,
  degenerate,
  unsupported,
  out_of_interval,
  singular,
  invalid_argument,
  memory_budget,
  fd_noise,
  nonconvergence,
};

inline const char* to_string(Errc e) {
  switch (e) {
    case Errc::model_mismatch: return "model_mismatch";
    case Errc::base_mismatch: return "base_mismatch";
    case Errc::not_tangent: return "not_tangent";
    case Errc::out_of_chart: return "out_of_chart";
    case Errc::bvp_nonconvergence: return "bvp_nonconvergence";
    case Errc::degenerate: return "degenerate";
    case Errc::unsupported: return "unsupported";
    case Errc::out_of_interval: return "out_of_interval";
    case Errc::singular: return "singular";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::memory_budget: return "memory_budget";
    case Errc::fd_noise: return "fd_noise";
    case Errc::nonconvergence: return "nonconvergence";
  }
  return "?";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg, double residual = 0.0)
      : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code), residual_(residual) {}
  Errc code() const { return code_; }
  // Residual, condition number or partial count, depending on the code.
  double residual() const { return residual_; }

 private:
  Errc code_;
  double residual_;
};

inline ModelId parse_model(std::string_view s) {
  if (s == "h2" || s == "H2") return ModelId::H2;
  if (s == "h3" || s == "H3") return ModelId::H3;
  if (s == "e2" || s == "E2") return ModelId::E2;
  if (s == "spinch" || s == "s_pinch" || s == "S_pinch") return ModelId::SPinch;
  throw Error(Errc::invalid_argument, "unknown model '" + std::string(s) + "'");
}

inline bool is_hyperboloid(ModelId m) { return m == ModelId::H2 || m == ModelId::H3; }
inline int manifold_dim(ModelId m) { return m == ModelId::H3 ? 3 : 2; }
inline int ambient_dim(ModelId m) { return is_hyperboloid(m) ? manifold_dim(m) + 1 : 2; }

// Up to 4 components, no heap.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;

struct Point {
  ModelId model = ModelId::E2;
  Vec x;
};

struct TangentVec {
  Point base;
  Vec v;
};

inline void require_model(ModelId a, ModelId b) {
  if (a != b) throw Error(Errc::model_mismatch, std::string(to_string(a)) + " vs " + to_string(b));
}

inline bool same_point(const Point& a, const Point& b, double tol = 1e-9) {
  return a.model == b.model && a.x.size() == b.x.size() &&
         (a.x - b.x).norm() <= tol * (1.0 + a.x.norm());
}

inline void require_base(const Point& p, const TangentVec& X) {
  require_model(p.model, X.base.model);
  if (!same_point(p, X.base)) throw Error(Errc::base_mismatch, "tangent vector based elsewhere");
}

// Minkowski form with the time coordinate last.
template <class A, class B>
auto mink(const A& a, const B& b) {
  const auto n = a.size() - 1;
  return a.head(n).dot(b.head(n)) - a(n) * b(n);
}

// Relative error with a floor so exact zeros compare sanely.
inline double rel_err(double a, double b, double floor = 1e-300) {
  const double s = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / s;
}

}  // namespace geovar
