#pragma once

#include "finite_difference.hpp"
#include "jacobi.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <array>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace geovar {

using Mp = boost::multiprecision::cpp_bin_float_50;

struct VariationOptions {
  double d_min = 0.5;
  JacobiOptions jacobi;
  double accel_h = 1e-3;   // step in s for D_s^2 d_t Psi
  double coord_h = 1e-3;   // step in s for x(s) derivatives (50-digit)
  double fd_h_mp = 1e-3;   // fd_partials step, closed-form models (50-digit)
  // fd_partials steps on S_pinch, where phi carries ~1e-12 noise from the shooting solve
  double fd_h_low = 1e-2;   // orders 1-2
  double fd_h_high = 2e-2;  // orders 3-4
};

enum class Route { intrinsic, normal_coords, finite_diff, hyperbolic_closed_form };

inline const char* to_string(Route r) {
  switch (r) {
    case Route::intrinsic: return "intrinsic";
    case Route::normal_coords: return "normal_coords";
    case Route::finite_diff: return "finite_diff";
    case Route::hyperbolic_closed_form: return "hyperbolic_closed_form";
  }
  return "?";
}

struct PartialsReport {
  Route route = Route::intrinsic;
  std::optional<double> phi, d_r, d_s, d2_rs, d2_rr, d2_ss, d3_rss;
  // d^{i+j} phi / dr^i ds^j for i+j <= max_order (finite_diff only); NaN where not computed
  std::vector<std::vector<double>> table;

  double at(int i, int j) const {
    if (i < static_cast<int>(table.size()) && j < static_cast<int>(table[static_cast<size_t>(i)].size()))
      return table[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return std::numeric_limits<double>::quiet_NaN();
  }
};

namespace detail {

// Smooth evaluation of a geodesic (point and velocity) at t.  For S_pinch the flow is
// integrated from the start with a fixed number of steps so the result is smooth in t.
inline TangentVec smooth_state(const Model& M, const Geodesic& g, double t, int steps) {
  if (M.id() != ModelId::SPinch) return g.velocity_at(t);
  detail::spinch::V4 y;
  y << g.start().x, g.velocity().v;
  const double dt = t / steps;
  if (dt != 0.0)
    for (int i = 0; i < steps; ++i) y = detail::spinch::step(y, dt);
  if (!detail::spinch::in_chart(y, M.params().chart_bound)) throw Error(Errc::out_of_chart, "geodesic leaves the chart");
  return TangentVec{Point{ModelId::SPinch, y.head<2>()}, Vec(y.tail<2>())};
}

// One step count per geodesic, so every caller sees the same smooth curve.
inline int smooth_steps(const Model& M, const Geodesic& g) {
  const double reach = std::max(std::abs(g.t_min()), std::abs(g.t_max()));
  if (!std::isfinite(reach)) return 8;
  return std::max(8, static_cast<int>(std::ceil(reach * std::max(1.0, g.speed()) / M.params().h)));
}

}  // namespace detail

// Closed-form models in arbitrary precision: exact unit-speed geodesics rebuilt from double data.
namespace mp {

template <class S>
using Arr = std::array<S, 4>;

template <class S>
S minkowski(const Arr<S>& a, const Arr<S>& b, int n) {
  S s = 0;
  for (int i = 0; i < n - 1; ++i) s += a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
  return s - a[static_cast<size_t>(n - 1)] * b[static_cast<size_t>(n - 1)];
}

template <class S>
S euclid(const Arr<S>& a, const Arr<S>& b, int n) {
  S s = 0;
  for (int i = 0; i < n; ++i) s += a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
  return s;
}

template <class S>
struct Curve {
  ModelId id;
  int n;          // ambient dimension
  S speed;
  Arr<S> x, u;    // start and unit initial direction
};

template <class S>
Curve<S> curve(const Geodesic& g) {
  using std::sqrt;
  Curve<S> c;
  c.id = g.model();
  c.n = ambient_dim(c.id);
  c.speed = S(g.speed());
  c.x.fill(S(0));
  c.u.fill(S(0));
  for (int i = 0; i < c.n; ++i) {
    c.x[static_cast<size_t>(i)] = S(g.start().x(i));
    c.u[static_cast<size_t>(i)] = S(g.velocity().v(i));
  }
  if (c.id == ModelId::E2) return c;  // u is the velocity itself
  // project onto the hyperboloid and its tangent space, then normalise
  const int m = c.n - 1;
  S r2 = 0;
  for (int i = 0; i < m; ++i) r2 += c.x[static_cast<size_t>(i)] * c.x[static_cast<size_t>(i)];
  c.x[static_cast<size_t>(m)] = sqrt(S(1) + r2);
  const S a = minkowski(c.u, c.x, c.n);
  for (int i = 0; i < c.n; ++i) c.u[static_cast<size_t>(i)] += a * c.x[static_cast<size_t>(i)];
  const S nu = sqrt(minkowski(c.u, c.u, c.n));
  for (int i = 0; i < c.n; ++i) c.u[static_cast<size_t>(i)] /= nu;
  return c;
}

template <class S>
Arr<S> point(const Curve<S>& c, const S& t) {
  using std::cosh;
  using std::sinh;
  Arr<S> p;
  p.fill(S(0));
  if (c.id == ModelId::E2) {
    for (int i = 0; i < c.n; ++i) p[static_cast<size_t>(i)] = c.x[static_cast<size_t>(i)] + t * c.u[static_cast<size_t>(i)];
    return p;
  }
  const S a = c.speed * t, ch = cosh(a), sh = sinh(a);
  for (int i = 0; i < c.n; ++i) p[static_cast<size_t>(i)] = ch * c.x[static_cast<size_t>(i)] + sh * c.u[static_cast<size_t>(i)];
  return p;
}

template <class S>
Arr<S> velocity(const Curve<S>& c, const S& t) {
  using std::cosh;
  using std::sinh;
  Arr<S> v;
  v.fill(S(0));
  if (c.id == ModelId::E2) return c.u;
  const S a = c.speed * t, ch = cosh(a), sh = sinh(a);
  for (int i = 0; i < c.n; ++i)
    v[static_cast<size_t>(i)] = c.speed * (sh * c.x[static_cast<size_t>(i)] + ch * c.u[static_cast<size_t>(i)]);
  return v;
}

template <class S>
S distance(ModelId id, const Arr<S>& p, const Arr<S>& q) {
  using std::log;
  using std::sqrt;
  const int n = ambient_dim(id);
  Arr<S> d;
  for (size_t i = 0; i < 4; ++i) d[i] = p[i] - q[i];
  if (id == ModelId::E2) return sqrt(euclid(d, d, n));
  const S c = -minkowski(p, q, n);
  if (c > S(2)) return log(c + sqrt(c * c - S(1)));
  const S h = sqrt(std::max(S(0), minkowski(d, d, n))) / S(2);
  return S(2) * log(h + sqrt(h * h + S(1)));
}

// Orthonormal basis at p, same construction as Model::orthonormal_basis.
template <class S>
std::vector<Arr<S>> basis(ModelId id, const Arr<S>& p) {
  const int n = ambient_dim(id);
  std::vector<Arr<S>> out;
  if (id == ModelId::E2) {
    for (int i = 0; i < 2; ++i) {
      Arr<S> e;
      e.fill(S(0));
      e[static_cast<size_t>(i)] = 1;
      out.push_back(e);
    }
    return out;
  }
  const int m = n - 1;
  const S t = p[static_cast<size_t>(m)];
  for (int i = 0; i < m; ++i) {
    Arr<S> e;
    e.fill(S(0));
    for (int k = 0; k < m; ++k) e[static_cast<size_t>(k)] = p[static_cast<size_t>(k)] * p[static_cast<size_t>(i)] / (S(1) + t);
    e[static_cast<size_t>(i)] += S(1);
    e[static_cast<size_t>(m)] = p[static_cast<size_t>(i)];
    out.push_back(e);
  }
  return out;
}

// Coordinates of log_p(q) in basis B.
template <class S>
std::vector<S> log_coords(ModelId id, const Arr<S>& p, const Arr<S>& q, const std::vector<Arr<S>>& B) {
  using std::sinh;
  const int n = ambient_dim(id);
  std::vector<S> c(B.size());
  Arr<S> L;
  if (id == ModelId::E2) {
    for (size_t i = 0; i < 4; ++i) L[i] = q[i] - p[i];
    for (size_t k = 0; k < B.size(); ++k) c[k] = euclid(L, B[k], n);
    return c;
  }
  const S d = distance(id, p, q);
  const S pq = minkowski(p, q, n);
  for (size_t i = 0; i < 4; ++i) L[i] = q[i] + pq * p[i];
  const S f = d / sinh(d);
  for (size_t k = 0; k < B.size(); ++k) c[k] = f * minkowski(L, B[k], n);
  return c;
}

template <class S>
std::vector<S> tangent_coords(ModelId id, const Arr<S>& v, const std::vector<Arr<S>>& B) {
  const int n = ambient_dim(id);
  std::vector<S> c(B.size());
  for (size_t k = 0; k < B.size(); ++k) c[k] = id == ModelId::E2 ? euclid(v, B[k], n) : minkowski(v, B[k], n);
  return c;
}

}  // namespace mp

class GeodesicVariation {
 public:
  GeodesicVariation(const Model& M, const Geodesic& eta, const Geodesic& gamma, double r0, double s0, VariationOptions opt = {})
      : M_(M), eta_(eta), gamma_(gamma), r0_(r0), s0_(s0), opt_(opt) {
    require_model(M.id(), eta.model());
    require_model(M.id(), gamma.model());
    if (std::abs(eta.speed() - 1.0) > 1e-8 || std::abs(gamma.speed() - 1.0) > 1e-8)
      throw Error(Errc::invalid_argument, "eta and gamma must be unit speed");
    const TangentVec e = detail::smooth_state(M, eta, r0, detail::smooth_steps(M, eta));
    const TangentVec g = detail::smooth_state(M, gamma, s0, detail::smooth_steps(M, gamma));
    eta_dot_ = e;
    gamma_dot_ = g;
    const double d = M.distance(e.base, g.base);
    if (d < opt.d_min) throw Error(Errc::degenerate, "geodesics closer than d_min", d);
    const Geodesic c = M.geodesic_connect(e.base, g.base, d);
    sigma_ = c.unit_speed();
    rho0_ = sigma_.t_max();
    frame_ = make_frame(M, sigma_, opt.jacobi);
    const TangentVec zero0{e.base, Vec::Zero(e.v.size())};
    const TangentVec zero1{g.base, Vec::Zero(g.v.size())};
    V_.emplace(jacobi_bvp(frame_, e, zero1));
    W_.emplace(jacobi_bvp(frame_, zero0, g));
    s0_state_ = V_->at(0.0);
    w0_state_ = W_->at(0.0);
    wL_state_ = W_->at(rho0_);
    vL_state_ = V_->at(rho0_);
    sdot0_ = frame_->tangent(0.0);
    sdotL_ = frame_->tangent(rho0_);
  }

  const Model& model() const { return M_; }
  const Geodesic& eta() const { return eta_; }
  const Geodesic& gamma() const { return gamma_; }
  const Geodesic& sigma() const { return sigma_; }
  double r0() const { return r0_; }
  double s0() const { return s0_; }
  double rho0() const { return rho0_; }
  const VariationOptions& options() const { return opt_; }
  const JacobiField& V() const { return *V_; }
  const JacobiField& W() const { return *W_; }
  std::shared_ptr<const JacobiFrame> frame() const { return frame_; }

  const TangentVec& eta_dot() const { return eta_dot_; }
  const TangentVec& gamma_dot() const { return gamma_dot_; }
  const TangentVec& sigma_dot0() const { return sdot0_; }
  const TangentVec& sigma_dotL() const { return sdotL_; }
  const JacobiState& V0() const { return s0_state_; }
  const JacobiState& VL() const { return vL_state_; }
  const JacobiState& W0() const { return w0_state_; }
  const JacobiState& WL() const { return wL_state_; }

  TangentVec perp0(const TangentVec& X) const { return normal_decompose(M_, X, sdot0_).normal; }
  TangentVec perpL(const TangentVec& X) const { return normal_decompose(M_, X, sdotL_).normal; }

 private:
  Model M_;
  Geodesic eta_, gamma_, sigma_;
  double r0_, s0_, rho0_ = 0;
  VariationOptions opt_;
  std::shared_ptr<const JacobiFrame> frame_;
  std::optional<JacobiField> V_, W_;
  TangentVec eta_dot_, gamma_dot_, sdot0_, sdotL_;
  JacobiState s0_state_, w0_state_, wL_state_, vL_state_;
};

inline GeodesicVariation build_variation(const Model& M, const Geodesic& eta, const Geodesic& gamma, double r0, double s0,
                                         VariationOptions opt = {}) {
  return GeodesicVariation(M, eta, gamma, r0, s0, opt);
}

inline std::pair<double, double> phi_first_partials(const GeodesicVariation& v) {
  const Model& M = v.model();
  return {-M.inner(v.sigma_dot0(), v.eta_dot()), M.inner(v.sigma_dotL(), v.gamma_dot())};
}

inline double second_variation(const GeodesicVariation& v) {
  const Model& M = v.model();
  return -M.inner(v.perp0(v.V0().value), v.perp0(v.W0().deriv));
}

inline std::pair<double, double> second_variation_rr_ss(const GeodesicVariation& v) {
  const Model& M = v.model();
  const double rr = -M.inner(v.perp0(v.V0().deriv), v.perp0(v.V0().value));
  const double ss = M.inner(v.perpL(v.WL().deriv), v.perpL(v.WL().value));
  return {rr, ss};
}

// D_s^2 d_t Psi at (r0, s0, 0).  Psi(r0, s, 0) = eta(r0) for every s, so this is the ordinary
// s-derivative of F(s) = D_t d_s Psi(r0, s, 0) inside the fixed tangent space at eta(r0).
inline TangentVec s_acceleration(const GeodesicVariation& v, double h = 0) {
  const Model& M = v.model();
  if (h <= 0) h = v.options().accel_h;
  const Point p = v.eta_dot().base;
  const double rho0 = v.rho0();
  const Vec guess = v.sigma().velocity().v;
  const int steps = detail::smooth_steps(M, v.gamma());
  auto F = [&](double s) -> Vec {
    const TangentVec g = detail::smooth_state(M, v.gamma(), s, steps);
    const Geodesic sig = M.geodesic_connect(p, g.base, rho0, &guess);
    const double c = sig.speed();
    const Geodesic u = sig.unit_speed();
    const auto frame = make_frame(M, u, v.options().jacobi);
    const TangentVec zero{u.at(0.0), Vec::Zero(p.x.size())};
    return c * jacobi_bvp(frame, zero, g).deriv0().v;
  };
  const Vec D1 = derivative<Vec>(F, v.s0(), 1, h, 4);
  const Vec D2 = derivative<Vec>(F, v.s0(), 1, h / 2, 4);
  const Vec A = (16.0 * D2 - D1) / 15.0;
  const double scale = std::max(1.0, F(v.s0()).norm());
  // Callers use only the part normal to sigma; the tangential part carries eps cosh^2(rho)/h
  // rounding from the hyperboloid coordinates and is not tested.
  const double gap = M.norm(v.perp0(M.project(p, D1 - D2)));
  if (gap > 0.1 * M.norm(v.perp0(M.project(p, A))) + 1e-9 * scale)
    throw Error(Errc::fd_noise, "s_acceleration step estimates disagree", gap);
  return TangentVec{p, A};
}

inline double third_variation(const GeodesicVariation& v, const TangentVec& accel) {
  const Model& M = v.model();
  const TangentVec V0p = v.perp0(v.V0().value);
  const TangentVec DW0 = v.W0().deriv;
  const TangentVec DW0p = v.perp0(DW0);
  return -M.inner(V0p, v.perp0(accel)) + 2.0 * M.inner(DW0p, V0p) * M.inner(DW0, v.sigma_dot0()) +
         M.inner(DW0p, DW0p) * M.inner(v.V0().value, v.sigma_dot0());
}

inline double third_variation(const GeodesicVariation& v) { return third_variation(v, s_acceleration(v)); }

inline PartialsReport intrinsic_partials(const GeodesicVariation& v, bool with_third = true) {
  PartialsReport r;
  r.route = Route::intrinsic;
  r.phi = v.rho0();
  const auto [dr, ds] = phi_first_partials(v);
  r.d_r = dr;
  r.d_s = ds;
  r.d2_rs = second_variation(v);
  const auto [rr, ss] = second_variation_rr_ss(v);
  r.d2_rr = rr;
  r.d2_ss = ss;
  if (with_third) r.d3_rss = third_variation(v);
  return r;
}

// Closed forms valid in constant curvature -1 (H2, H3).
inline PartialsReport hyperbolic_closed_form(const GeodesicVariation& v) {
  const Model& M = v.model();
  if (!is_hyperboloid(M.id())) throw Error(Errc::unsupported, "closed forms need curvature -1");
  PartialsReport r;
  r.route = Route::hyperbolic_closed_form;
  const double rho = v.rho0();
  r.phi = rho;
  const auto [dr, ds] = phi_first_partials(v);
  r.d_r = dr;
  r.d_s = ds;
  const TangentVec ep = v.perp0(v.eta_dot());
  const TangentVec gp = v.perpL(v.gamma_dot());
  const double en = M.norm(ep), gn = M.norm(gp);
  r.d2_rr = en * en / std::tanh(rho);
  r.d2_ss = gn * gn / std::tanh(rho);
  if (gn > 0) {
    const TangentVec Q0 = M.parallel_transport(v.sigma(), gp, rho, 0.0);
    r.d2_rs = -gn / std::sinh(rho) * M.inner(ep, Q0) / gn;
  } else {
    r.d2_rs = 0.0;
  }
  return r;
}

// Normal coordinates about eta(r0); x(s) = log coordinates of gamma(s), y = eta-dot(r0).
// Evaluated in 50-digit arithmetic so the only error left is the stencil truncation.
inline PartialsReport normal_coord_partials(const GeodesicVariation& v) {
  const Model& M = v.model();
  if (M.id() == ModelId::SPinch) throw Error(Errc::unsupported, "normal coordinates need a closed-form log map");
  using S = Mp;
  const ModelId id = M.id();
  const auto ce = mp::curve<S>(v.eta()), cg = mp::curve<S>(v.gamma());
  const auto p = mp::point(ce, S(v.r0()));
  const auto B = mp::basis(id, p);
  const size_t n = B.size();
  const auto y = mp::tangent_coords(id, mp::velocity(ce, S(v.r0())), B);
  const S h = S(v.options().coord_h);
  // x at s0 + k h/2, k = -4..4
  std::vector<std::vector<S>> xs;
  for (int k = -4; k <= 4; ++k) xs.push_back(mp::log_coords(id, p, mp::point(cg, S(v.s0()) + S(k) * h / S(2)), B));
  auto deriv = [&](int m) {
    const auto st = central_stencil<S>(m, 4);
    std::vector<S> coarse(n, S(0)), fine(n, S(0));
    for (size_t u = 0; u < st.offsets.size(); ++u) {
      const int o = st.offsets[u];
      for (size_t i = 0; i < n; ++i) {
        if (std::abs(2 * o) <= 4) coarse[i] += st.weights[u] * xs[static_cast<size_t>(2 * o + 4)][i];
        fine[i] += st.weights[u] * xs[static_cast<size_t>(o + 4)][i];
      }
    }
    std::vector<S> out(n);
    const S hc = m == 1 ? h : h * h, hf = m == 1 ? h / S(2) : h * h / S(4);
    for (size_t i = 0; i < n; ++i) out[i] = richardson<S>(coarse[i] / hc, fine[i] / hf, 4);
    return out;
  };
  const auto& x = xs[4];
  const auto xd = deriv(1), xdd = deriv(2);
  auto dot = [&](const std::vector<S>& a, const std::vector<S>& b) {
    S s = 0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  };
  using std::sqrt;
  const S rx = sqrt(dot(x, x));
  std::vector<S> xh(n);
  for (size_t i = 0; i < n; ++i) xh[i] = x[i] / rx;
  const S xd_h = dot(xd, xh), y_h = dot(y, xh), xdd_h = dot(xdd, xh);
  PartialsReport r;
  r.route = Route::normal_coords;
  r.phi = static_cast<double>(rx);
  r.d_r = static_cast<double>(-y_h);
  r.d_s = static_cast<double>(xd_h);
  const S second = -(dot(xd, y) - xd_h * y_h) / rx;
  r.d2_rs = static_cast<double>(second);
  const S third = -(dot(xdd, y) - xdd_h * y_h) / rx + S(2) * xd_h / (rx * rx) * (dot(xd, y) - y_h * xd_h) +
                  y_h / (rx * rx) * (dot(xd, xd) - xd_h * xd_h);
  r.d3_rss = static_cast<double>(third);
  return r;
}

// All partials of phi(r,s) = d(eta(r), gamma(s)) up to max_order by central stencils plus Richardson.
inline PartialsReport fd_partials(const Model& M, const Geodesic& eta, const Geodesic& gamma, double r0, double s0, int max_order,
                                  VariationOptions opt = {}) {
  if (max_order < 0 || max_order > 4) throw Error(Errc::invalid_argument, "fd_partials supports orders 0..4");
  PartialsReport r;
  r.route = Route::finite_diff;
  r.table.assign(static_cast<size_t>(max_order + 1),
                 std::vector<double>(static_cast<size_t>(max_order + 1), std::numeric_limits<double>::quiet_NaN()));
  if (M.id() != ModelId::SPinch) {
    using S = Mp;
    const auto ce = mp::curve<S>(eta), cg = mp::curve<S>(gamma);
    std::map<std::pair<double, double>, S> cache;
    auto phi = [&](const S& a, const S& b) {
      const auto key = std::make_pair(static_cast<double>(a), static_cast<double>(b));
      auto it = cache.find(key);
      if (it != cache.end()) return it->second;
      const S d = mp::distance(M.id(), mp::point(ce, a), mp::point(cg, b));
      cache.emplace(key, d);
      return d;
    };
    const S h = S(opt.fd_h_mp);
    if (static_cast<double>(phi(S(r0), S(s0))) < opt.d_min) throw Error(Errc::degenerate, "geodesics closer than d_min");
    for (int i = 0; i <= max_order; ++i)
      for (int j = 0; i + j <= max_order; ++j)
        r.table[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            i + j == 0 ? static_cast<double>(phi(S(r0), S(s0)))
                       : static_cast<double>(mixed_partial_richardson<S>(phi, S(r0), S(s0), i, j, h, 4).value);
  } else {
    const int ne = detail::smooth_steps(M, eta);
    const int ng = detail::smooth_steps(M, gamma);
    std::map<std::pair<double, double>, double> cache;
    auto phi = [&](double a, double b) {
      const auto key = std::make_pair(a, b);
      auto it = cache.find(key);
      if (it != cache.end()) return it->second;
      const double d = M.distance(detail::smooth_state(M, eta, a, ne).base, detail::smooth_state(M, gamma, b, ng).base);
      cache.emplace(key, d);
      return d;
    };
    if (phi(r0, s0) < opt.d_min) throw Error(Errc::degenerate, "geodesics closer than d_min");
    for (int i = 0; i <= max_order; ++i)
      for (int j = 0; i + j <= max_order; ++j) {
        const int k = i + j;
        double val;
        if (k == 0) {
          val = phi(r0, s0);
        } else if (k <= 2) {
          val = mixed_partial_richardson<double>(phi, r0, s0, i, j, opt.fd_h_low, 2).value;
        } else {
          const auto rr = mixed_partial_richardson<double>(phi, r0, s0, i, j, opt.fd_h_high, 4);
          val = rr.value;
        }
        r.table[static_cast<size_t>(i)][static_cast<size_t>(j)] = val;
      }
  }
  r.phi = r.at(0, 0);
  if (max_order >= 1) {
    r.d_r = r.at(1, 0);
    r.d_s = r.at(0, 1);
  }
  if (max_order >= 2) {
    r.d2_rs = r.at(1, 1);
    r.d2_rr = r.at(2, 0);
    r.d2_ss = r.at(0, 2);
  }
  if (max_order >= 3) r.d3_rss = r.at(1, 2);
  return r;
}

inline PartialsReport fd_partials(const GeodesicVariation& v, int max_order) {
  return fd_partials(v.model(), v.eta(), v.gamma(), v.r0(), v.s0(), max_order, v.options());
}

}  // namespace geovar
