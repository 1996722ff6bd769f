#pragma once

#include "parallel.hpp"
#include "sampling.hpp"

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace geovar {

struct FootPoint {
  double distance = 0;
  double s = 0;              // argmin parameter on the core
  double grad_residual = 0;  // |d/ds d(q, core(s))| at s, 0 when q is on the core
  int iterations = 0;
};

enum class FootMethod { automatic, golden, fermi };

namespace detail {

// d/ds d(q, core(s)) = <grad_1 d(core(s), q), core'(s)>
inline double foot_slope(const Model& M, const Point& q, const Geodesic& core, double s) {
  const TangentVec v = core.velocity_at(s);
  if (M.distance(v.base, q) < 1e-14) return 0.0;
  return M.inner(M.grad_distance(v.base, q), v);
}

inline FootPoint foot_golden(const Model& M, const Point& q, const Geodesic& core, double tol) {
  const double sp = core.speed();
  const double reach = M.distance(q, core.at(std::clamp(0.0, core.t_min(), core.t_max()))) / sp + 1.0;
  // Projection onto a convex set is 1-Lipschitz in K <= 0, so the foot lies within `reach`.
  double lo = std::max(core.t_min(), -reach), hi = std::min(core.t_max(), reach);
  auto f = [&](double s) { return M.distance(q, core.at(s)); };
  std::uintmax_t it = 200;
  const auto r = boost::math::tools::brent_find_minima(f, lo, hi, std::numeric_limits<double>::digits / 2, it);
  FootPoint out;
  out.s = r.first;
  out.distance = r.second;
  out.iterations = static_cast<int>(it);

  // The minimum value is already accurate; the argmin is refined as the root of the slope.
  auto g = [&](double s) { return foot_slope(M, q, core, s); };
  double w = std::max(tol, 1e-7 * (1.0 + std::abs(out.s)));
  double a = std::max(lo, out.s - w), b = std::min(hi, out.s + w);
  double ga = g(a), gb = g(b);
  for (int k = 0; k < 40 && ga * gb > 0; ++k) {
    w *= 4;
    a = std::max(lo, out.s - w);
    b = std::min(hi, out.s + w);
    ga = g(a);
    gb = g(b);
  }
  if (ga * gb <= 0 && ga != gb) {
    std::uintmax_t rit = 100;
    const auto br = boost::math::tools::toms748_solve(
        g, a, b, ga, gb, [tol](double x, double y) { return std::abs(x - y) <= 0.25 * tol; }, rit);
    const double s = 0.5 * (br.first + br.second);
    const double d = f(s);
    if (d <= out.distance + 1e-12 * (1.0 + out.distance)) {
      out.s = s;
      out.distance = d;
    }
    out.iterations += static_cast<int>(rit);
  }
  out.grad_residual = out.distance > 1e-12 ? std::abs(g(out.s)) : 0.0;
  return out;
}

// S_pinch: solve exp_{core(s)}(d * nu(s)) = q for (s, d) by Newton in Fermi coordinates.
// nu is core' rotated by +90 degrees in the chart (an isometry of each conformal tangent
// plane); the Jacobian comes from the variational equations of the flow.
inline bool foot_fermi(const Model& M, const Point& q, const Geodesic& core, FootPoint& out) {
  using spinch::V2;
  using spinch::V4;
  auto rot = [](const V2& v) { return V2(-v(1), v(0)); };
  const V2 qx = q.x;

  // coarse guess from the chart
  const double span = core.t_max() - core.t_min();
  const int ng = std::max(8, static_cast<int>(span / 0.05));
  double s = 0, best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= ng; ++i) {
    const double si = core.t_min() + span * i / ng;
    const double e = (V2(core.at(si).x) - qx).norm();
    if (e < best) best = e, s = si;
  }
  double d;
  {
    const TangentVec v = core.velocity_at(s);
    const V2 x = v.base.x;
    d = spinch::conformal(x) * (qx - x).dot(rot(V2(v.v)) / core.speed());
  }
  const int n = std::max(200, static_cast<int>(std::ceil((std::abs(d) + 1.0) / M.params().h)));
  const double h = 1.0 / n;

  double res_prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 60; ++it) {
    if (!core.contains(s)) return false;
    const TangentVec tv = core.velocity_at(s);
    const V2 x = tv.base.x, v = V2(tv.v) / core.speed();
    const V2 nu = rot(v);
    spinch::FlowVar st;
    st.y << x, d * nu;
    st.J.col(0) << v, d * rot(spinch::accel(x, v));
    st.J.col(1) << V2::Zero(), nu;
    for (int k = 0; k < n; ++k) {
      st = spinch::rk4_var(st, h);
      if (!spinch::in_chart(st.y, M.params().chart_bound)) return false;
    }
    const V2 F = st.y.head<2>() - qx;
    const double res = F.norm();
    out.iterations = it + 1;
    if (res <= 1e-13 * (1.0 + qx.norm()) || (res >= 0.5 * res_prev && res <= 1e-11)) {
      out.s = s;
      out.distance = std::abs(d);
      // slope of s -> d(q, core(s)) is -cos of the angle at the foot, zero by construction
      out.grad_residual = 0.0;
      return true;
    }
    res_prev = res;
    const Eigen::Matrix2d Jp = st.J.topRows<2>();
    const Eigen::Vector2d step = Jp.fullPivLu().solve(-F);
    if (!step.allFinite()) return false;
    const double damp = std::min(1.0, 1.0 / std::max(1e-300, step.norm()));
    s += damp * step(0);
    d += damp * step(1);
  }
  return false;
}

}  // namespace detail

// Distance from q to the core geodesic, treated as a complete line within its interval.
inline FootPoint distance_to_geodesic(const Model& M, const Point& q, const Geodesic& core,
                                      FootMethod method = FootMethod::automatic, double tol = 1e-9) {
  require_model(M.id(), q.model);
  require_model(M.id(), core.model());
  if (method == FootMethod::automatic) method = M.id() == ModelId::SPinch ? FootMethod::fermi : FootMethod::golden;
  if (method == FootMethod::fermi) {
    if (M.id() != ModelId::SPinch) throw Error(Errc::unsupported, "Fermi foot-point solver is for S_pinch");
    FootPoint out;
    if (detail::foot_fermi(M, q, core, out)) return out;
  }
  return detail::foot_golden(M, q, core, tol);
}

// sin(theta_T / 2) = sinh(R/2) / sinh(T)
inline double theta_T(double R, double T) {
  if (!(R > 0) || !(T > 0)) throw Error(Errc::invalid_argument, "theta_T needs R, T > 0");
  const double a = std::sinh(0.5 * R) / std::sinh(T);
  if (a > 1.0 + 1e-15) throw Error(Errc::invalid_argument, "theta_T: sinh(R/2) > sinh(T), T too small for R", a);
  return 2.0 * std::asin(std::min(1.0, a));
}

// Inverse of theta_T in R: the tube radius whose aperture at T is theta.
inline double radius_for_theta(double theta, double T) {
  return 2.0 * std::asinh(std::sinh(T) * std::sin(0.5 * theta));
}

struct ConeSample {
  double t = 0, angle = 0, distance = 0, foot_s = 0;
  int branch = 1;
};

struct ConeReport {
  ModelId model = ModelId::H2;
  double R = 0, T = 0, theta = 0;
  int n = 0;
  double max_ratio = 0;
  double boundary_ratio = 0;  // probe at t = T, angle = theta_T
  int failures = 0;           // samples whose foot-point solve threw
  std::vector<ConeSample> violations;
};

struct ConeOptions {
  int threads = 1;
  double vertex_radius = 0.5;  // random vertex within this ball of the model origin
  double slack = 1e-9;
};

// Core geodesic through a random vertex p = core(0), long enough to hold the feet of the cone.
inline Geodesic cone_core(const Model& M, Rng& g, double T, double R, double vertex_radius) {
  const Point p = random_point(M, g, vertex_radius);
  const double L = T + R + 1.0;
  return M.geodesic(random_unit(M, p, g), -L, L);
}

inline ConeReport cone_in_tube_check(const Model& M, const Geodesic& core, double R, double T, int n,
                                     std::uint64_t seed, const ConeOptions& o = {}) {
  if (M.id() != ModelId::H2 && M.id() != ModelId::SPinch)
    throw Error(Errc::unsupported, "cone_in_tube_check needs curvature in [-1,0] in 2D (h2 or spinch)");
  if (n <= 0) throw Error(Errc::invalid_argument, "sample count must be positive");
  if (std::abs(core.speed() - 1.0) > 1e-10) throw Error(Errc::invalid_argument, "core must be unit speed");
  ConeReport rep;
  rep.model = M.id();
  rep.R = R;
  rep.T = T;
  rep.theta = theta_T(R, T);
  rep.n = n;
  const TangentVec e = core.velocity_at(0.0);

  auto probe = [&](double t, double angle, int branch, Rng& g) {
    const TangentVec axis{e.base, branch * e.v};
    const TangentVec u = unit_at_angle(M, axis, angle, g);
    const Point q = M.exp_map(u, t);
    const FootPoint f = distance_to_geodesic(M, q, core);
    return ConeSample{t, angle, f.distance, f.s, branch};
  };

  std::vector<ConeSample> out(static_cast<size_t>(n));
  std::vector<char> failed(static_cast<size_t>(n), 0);
  parallel_for(static_cast<size_t>(n), o.threads, [&](size_t i) {
    Rng g = rng_for(seed, i);
    const double t = uniform(g, 0.1 * T, T);
    const double a = uniform(g, 0.0, rep.theta);
    const int branch = uniform(g, 0.0, 1.0) < 0.5 ? 1 : -1;
    try {
      out[i] = probe(t, a, branch, g);
    } catch (const Error&) {
      failed[i] = 1;
    }
  });
  for (size_t i = 0; i < out.size(); ++i) {
    if (failed[i]) {
      ++rep.failures;
      continue;
    }
    rep.max_ratio = std::max(rep.max_ratio, out[i].distance / R);
    if (out[i].distance > R * (1.0 + o.slack)) rep.violations.push_back(out[i]);
  }
  Rng g = rng_for(seed, static_cast<std::uint64_t>(n));
  const ConeSample b = probe(T, rep.theta, 1, g);
  rep.boundary_ratio = b.distance / R;
  if (b.distance > R * (1.0 + o.slack)) rep.violations.push_back(b);
  return rep;
}

}  // namespace geovar
