#pragma once

#include "core.hpp"
#include "rk4.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <vector>

namespace geovar {

struct ModelParams {
  double h = 1e-3;             // RK4 step (S_pinch)
  double chart_bound = 6.0;    // S_pinch chart is [-b,b]^2
  double newton_tol = 1e-10;   // endpoint residual, metric norm
  int newton_max = 50;
  double distance_length = 16.0;  // parameter length used by distance()/grad_distance()
};

namespace detail::spinch {

using V2 = Eigen::Vector2d;
using V4 = Eigen::Vector4d;
using M42 = Eigen::Matrix<double, 4, 2>;

// metric e^{2u}(dx^2+dy^2), u = |x|^2/4
inline double conformal(const V2& x) { return std::exp(0.5 * x.squaredNorm()); }
inline double gauss_curvature(const V2& x) { return -std::exp(-0.5 * x.squaredNorm()); }

inline V2 accel(const V2& x, const V2& v) { return -x.dot(v) * v + 0.5 * v.squaredNorm() * x; }

inline V4 flow(const V4& y) {
  V4 d;
  d.head<2>() = y.tail<2>();
  d.tail<2>() = accel(y.head<2>(), y.tail<2>());
  return d;
}

// Flow plus its linearisation acting on a 4x2 block of perturbations.
struct FlowVar {
  V4 y;
  M42 J;
};

inline FlowVar flow_var(const FlowVar& s) {
  const V2 x = s.y.head<2>(), v = s.y.tail<2>();
  const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d ax = -v * v.transpose() + 0.5 * v.squaredNorm() * I;
  const Eigen::Matrix2d av = -x.dot(v) * I - v * x.transpose() + x * v.transpose();
  FlowVar d;
  d.y = flow(s.y);
  d.J.topRows<2>() = s.J.bottomRows<2>();
  d.J.bottomRows<2>() = ax * s.J.topRows<2>() + av * s.J.bottomRows<2>();
  return d;
}

inline FlowVar rk4_var(const FlowVar& s, double h) {
  auto add = [](const FlowVar& a, double c, const FlowVar& b) { return FlowVar{a.y + c * b.y, a.J + c * b.J}; };
  const FlowVar k1 = flow_var(s);
  const FlowVar k2 = flow_var(add(s, 0.5 * h, k1));
  const FlowVar k3 = flow_var(add(s, 0.5 * h, k2));
  const FlowVar k4 = flow_var(add(s, h, k3));
  return FlowVar{s.y + (h / 6.0) * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
                 s.J + (h / 6.0) * (k1.J + 2.0 * k2.J + 2.0 * k3.J + k4.J)};
}

inline bool in_chart(const V4& y, double bound) {
  return std::isfinite(y(0)) && std::isfinite(y(1)) && std::abs(y(0)) <= bound && std::abs(y(1)) <= bound;
}

inline V4 step(const V4& y, double h) {
  return rk4_step(y, 0.0, h, [](double, const V4& s) { return flow(s); });
}

// Gamma^k_ij = d_ik u_j + d_jk u_i - d_ij u_k with u_i = x_i/2
inline double christoffel(const V2& x, int k, int i, int j) {
  auto d = [](int a, int b) { return a == b ? 1.0 : 0.0; };
  return d(i, k) * 0.5 * x(j) + d(j, k) * 0.5 * x(i) - d(i, j) * 0.5 * x(k);
}

inline double christoffel_deriv(int l, int k, int i, int j) {
  auto d = [](int a, int b) { return a == b ? 1.0 : 0.0; };
  return 0.5 * (d(i, k) * d(j, l) + d(j, k) * d(i, l) - d(i, j) * d(k, l));
}

// R(X,Y)Z = X^i Y^j Z^k R_ijk^l d_l with
// R_ijk^l = d_i G^l_jk - d_j G^l_ik + G^m_jk G^l_im - G^m_ik G^l_jm
inline V2 curvature(const V2& x, const V2& X, const V2& Y, const V2& Z) {
  V2 out = V2::Zero();
  for (int l = 0; l < 2; ++l)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          double r = christoffel_deriv(i, l, j, k) - christoffel_deriv(j, l, i, k);
          for (int m = 0; m < 2; ++m)
            r += christoffel(x, m, j, k) * christoffel(x, l, i, m) - christoffel(x, m, i, k) * christoffel(x, l, j, m);
          out(l) += X(i) * Y(j) * Z(k) * r;
        }
  return out;
}

// dX/dt = -Gamma(v, X) along the flow
inline V2 transport_rhs(const V2& x, const V2& v, const V2& X) {
  return -0.5 * (x.dot(X) * v + x.dot(v) * X - v.dot(X) * x);
}

// Immutable node table of the geodesic flow; nodes at t = k*dt.
struct Trajectory {
  double dt = 0;
  long k_lo = 0, k_hi = 0;
  std::vector<V4> nodes;

  V4 state(double t) const {
    long k = static_cast<long>(std::floor(t / dt));
    k = std::clamp(k, k_lo, k_hi);
    const double tau = t - static_cast<double>(k) * dt;
    const V4& y = nodes[static_cast<size_t>(k - k_lo)];
    if (tau == 0.0) return y;
    return step(y, tau);
  }
};

inline std::shared_ptr<const Trajectory> integrate(const V4& y0, double dt, double t_min, double t_max, double bound) {
  auto tr = std::make_shared<Trajectory>();
  tr->dt = dt;
  tr->k_lo = static_cast<long>(std::floor(t_min / dt + 1e-9));
  tr->k_hi = static_cast<long>(std::ceil(t_max / dt - 1e-9));
  tr->k_lo = std::min(tr->k_lo, 0L);
  tr->k_hi = std::max(tr->k_hi, 0L);
  tr->nodes.assign(static_cast<size_t>(tr->k_hi - tr->k_lo + 1), V4::Zero());
  const size_t i0 = static_cast<size_t>(-tr->k_lo);
  tr->nodes[i0] = y0;
  auto guard = [&](const V4& y) {
    if (!in_chart(y, bound)) throw Error(Errc::out_of_chart, "S_pinch geodesic leaves the chart");
  };
  guard(y0);
  for (size_t i = i0 + 1; i < tr->nodes.size(); ++i) {
    tr->nodes[i] = step(tr->nodes[i - 1], dt);
    guard(tr->nodes[i]);
  }
  for (size_t i = i0; i-- > 0;) {
    tr->nodes[i] = step(tr->nodes[i + 1], -dt);
    guard(tr->nodes[i]);
  }
  return tr;
}

struct ShootResult {
  V2 v0;
  double residual;
  int iterations;
  bool ok;
};

// Newton single shooting on v0 so that x(L) = q, n fixed steps of size L/n.
inline ShootResult shoot(const V2& p, const V2& q, double L, const V2& guess, const ModelParams& prm) {
  const int n = std::max(1, static_cast<int>(std::ceil(L / prm.h - 1e-9)));
  const double dt = L / n;
  const double wq = std::sqrt(conformal(q));
  auto run = [&](const V2& v0, FlowVar& out) {
    FlowVar s;
    s.y << p, v0;
    s.J.setZero();
    s.J.bottomRows<2>().setIdentity();
    for (int i = 0; i < n; ++i) {
      s = rk4_var(s, dt);
      if (!in_chart(s.y, prm.chart_bound)) return false;
    }
    out = s;
    return true;
  };
  ShootResult r{guess, std::numeric_limits<double>::infinity(), 0, false};
  FlowVar s;
  if (!run(r.v0, s)) return r;
  V2 F = s.y.head<2>() - q;
  r.residual = wq * F.norm();
  bool polished = false;
  for (int it = 0; it < prm.newton_max; ++it) {
    r.iterations = it + 1;
    if (r.residual <= prm.newton_tol) {
      if (polished || r.residual == 0.0) break;
      polished = true;
    }
    const Eigen::Matrix2d Jx = s.J.topRows<2>();
    const V2 dv = -Jx.fullPivLu().solve(F);
    if (!dv.allFinite()) break;
    double damp = 1.0;
    bool accepted = false;
    const int tries = polished ? 1 : 40;
    for (int b = 0; b < tries; ++b, damp *= 0.5) {
      FlowVar trial;
      const V2 cand = r.v0 + damp * dv;
      if (!run(cand, trial)) continue;
      const V2 Ft = trial.y.head<2>() - q;
      const double rt = wq * Ft.norm();
      if (rt < r.residual || (polished && rt <= r.residual)) {
        r.v0 = cand;
        s = trial;
        F = Ft;
        r.residual = rt;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    if (polished) break;
  }
  r.ok = r.residual <= prm.newton_tol;
  return r;
}

inline ShootResult connect(const V2& p, const V2& q, double L, const V2* guess, const ModelParams& prm) {
  const V2 chord = (q - p) / L;
  ShootResult r = shoot(p, q, L, guess ? *guess : chord, prm);
  if (r.ok) return r;
  if (guess) {
    r = shoot(p, q, L, chord, prm);
    if (r.ok) return r;
  }
  // continuation in the target point
  const int K = 8;
  V2 v = chord / K;
  for (int k = 1; k <= K; ++k) {
    const V2 qk = p + (static_cast<double>(k) / K) * (q - p);
    if (k > 1) v *= static_cast<double>(k) / (k - 1);
    r = shoot(p, qk, L, v, prm);
    if (!r.ok) break;
    v = r.v0;
  }
  return r;
}

}  // namespace detail::spinch

class Model;

class Geodesic {
 public:
  Geodesic() = default;

  ModelId model() const { return start_.model; }
  const Point& start() const { return start_; }
  const TangentVec& velocity() const { return velocity_; }
  double speed() const { return speed_; }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }
  const ModelParams& params() const { return params_; }

  bool contains(double t) const {
    const double tol = 1e-9 * std::max(1.0, std::abs(t));
    return t >= t_min_ - tol && t <= t_max_ + tol;
  }

  Point at(double t) const {
    check(t);
    Point p{model(), Vec()};
    if (traj_) {
      const auto y = traj_->state(t * tscale_);
      p.x = y.head<2>();
      return p;
    }
    if (model() == ModelId::E2) {
      p.x = start_.x + t * velocity_.v;
      return p;
    }
    if (has_end_) {
      const double a = speed_ * t, sa = std::sinh(a_end_);
      p.x = (std::sinh(a_end_ - a) / sa) * start_.x + (std::sinh(a) / sa) * end_.x;
      renormalize(p.x);
      return p;
    }
    const double n = speed_ * t;
    p.x = std::cosh(n) * start_.x + (speed_ > 0 ? std::sinh(n) / speed_ : t) * velocity_.v;
    renormalize(p.x);
    return p;
  }

  TangentVec velocity_at(double t) const {
    check(t);
    if (traj_) {
      const auto y = traj_->state(t * tscale_);
      return TangentVec{Point{model(), y.head<2>()}, Vec(tscale_ * y.tail<2>())};
    }
    if (model() == ModelId::E2) return TangentVec{at(t), velocity_.v};
    const double n = speed_ * t;
    TangentVec out{at(t), Vec()};
    if (has_end_) {
      const double sa = std::sinh(a_end_);
      out.v = (speed_ * -std::cosh(a_end_ - n) / sa) * start_.x + (speed_ * std::cosh(n) / sa) * end_.x;
    } else {
      out.v = speed_ * std::sinh(n) * start_.x + std::cosh(n) * velocity_.v;
    }
    out.v += mink(out.v, out.base.x) * out.base.x;
    return out;
  }

  // Same curve reparametrised by arc length from the same start.
  Geodesic unit_speed() const {
    Geodesic g = *this;
    const double c = speed_;
    g.velocity_.v /= c;
    g.speed_ = 1.0;
    g.t_min_ = t_min_ * c;
    g.t_max_ = t_max_ * c;
    g.tscale_ = tscale_ / c;
    return g;
  }

  // Time coordinate recomputed from the spatial part; accurate far from the origin.
  static void renormalize(Vec& x) {
    const auto n = x.size() - 1;
    x(n) = std::sqrt(1.0 + x.head(n).squaredNorm());
  }

 private:
  friend class Model;
  void check(double t) const {
    if (!contains(t)) throw Error(Errc::out_of_interval, "parameter " + std::to_string(t) + " outside geodesic interval");
  }

  Point start_;
  TangentVec velocity_;
  double speed_ = 0;
  double t_min_ = 0, t_max_ = 0;
  double tscale_ = 1.0;
  // Hyperboloid geodesics built from two endpoints are evaluated by interpolating between
  // them; propagating from one end amplifies tangency error like sinh(2t).
  bool has_end_ = false;
  Point end_;
  double a_end_ = 0;  // arc length from start_ to end_
  ModelParams params_;
  std::shared_ptr<const detail::spinch::Trajectory> traj_;
};

class Model {
 public:
  explicit Model(ModelId id, ModelParams params = {}) : id_(id), prm_(params) {}

  ModelId id() const { return id_; }
  const ModelParams& params() const { return prm_; }
  int dim() const { return manifold_dim(id_); }

  Point origin() const {
    Point p{id_, Vec::Zero(ambient_dim(id_))};
    if (is_hyperboloid(id_)) p.x(dim()) = 1.0;
    return p;
  }

  // Validates (and for the hyperboloid renormalises) raw coordinates.
  Point point(const Vec& x) const {
    if (x.size() != ambient_dim(id_) || !x.allFinite()) throw Error(Errc::invalid_argument, "bad coordinates");
    Point p{id_, x};
    if (is_hyperboloid(id_)) {
      if (x(dim()) < 1.0 - 1e-9 || -mink(x, x) <= 0) throw Error(Errc::invalid_argument, "not on the upper hyperboloid");
      Geodesic::renormalize(p.x);
    } else if (id_ == ModelId::SPinch) {
      check_chart(p);
    }
    return p;
  }

  // Hyperboloid point from spatial coordinates (time coordinate solved for).
  Point lift(const Vec& spatial) const {
    if (!is_hyperboloid(id_)) return point(spatial);
    Vec x(dim() + 1);
    x.head(dim()) = spatial;
    x(dim()) = std::sqrt(1.0 + spatial.squaredNorm());
    return Point{id_, x};
  }

  TangentVec tangent(const Point& p, const Vec& v) const {
    require_model(id_, p.model);
    TangentVec X{p, v};
    check_tangent(X);
    return X;
  }

  TangentVec project(const Point& p, const Vec& v) const {
    require_model(id_, p.model);
    TangentVec X{p, v};
    if (is_hyperboloid(id_)) X.v += mink(v, p.x) * p.x;
    return X;
  }

  double metric_inner(const Point& p, const TangentVec& X, const TangentVec& Y) const {
    require_model(id_, p.model);
    require_base(p, X);
    require_base(p, Y);
    check_tangent(X);
    check_tangent(Y);
    return inner(X, Y);
  }

  // Unchecked inner product for inner loops; X, Y share a base.
  double inner(const TangentVec& X, const TangentVec& Y) const {
    switch (id_) {
      case ModelId::H2:
      case ModelId::H3: return mink(X.v, Y.v);
      case ModelId::E2: return X.v.dot(Y.v);
      case ModelId::SPinch: return detail::spinch::conformal(X.base.x) * X.v.dot(Y.v);
    }
    return 0;
  }
  double norm(const TangentVec& X) const { return std::sqrt(std::max(0.0, inner(X, X))); }

  double distance(const Point& p, const Point& q) const {
    require_model(id_, p.model);
    require_model(id_, q.model);
    switch (id_) {
      case ModelId::E2: return (p.x - q.x).norm();
      case ModelId::H2:
      case ModelId::H3: {
        // Two formulas; their rounding errors scale like |p||q| (pairing) and |p - q|^2
        // (chord), so take whichever estimate is smaller.
        const Vec d = p.x - q.x;
        const double m = std::max(0.0, mink(d, d));
        const double c = -mink(p.x, q.x);
        const double e_pair = p.x.norm() * q.x.norm() / std::max(1e-300, std::sqrt(std::max(0.0, c * c - 1.0)));
        const double e_chord = d.squaredNorm() / std::max(1e-300, std::sqrt(m * (1.0 + 0.25 * m)));
        if (c > 1.0 && e_pair < e_chord) return std::acosh(c);
        return 2.0 * std::asinh(0.5 * std::sqrt(m));
      }
      case ModelId::SPinch: {
        if (same_point(p, q, 1e-14)) return std::sqrt(detail::spinch::conformal(p.x)) * (p.x - q.x).norm();
        check_chart(p);
        check_chart(q);
        const Geodesic g = geodesic_connect(p, q, prm_.distance_length);
        return g.speed() * prm_.distance_length;
      }
    }
    return 0;
  }

  Point exp_map(const TangentVec& X, double t = 1.0) const {
    require_model(id_, X.base.model);
    Point out{id_, Vec()};
    switch (id_) {
      case ModelId::E2: out.x = X.base.x + t * X.v; return out;
      case ModelId::H2:
      case ModelId::H3: {
        const double n = norm(X);
        const double a = n * t;
        const double sc = n > 0 ? std::sinh(a) / n : t;
        out.x = std::cosh(a) * X.base.x + sc * X.v;
        Geodesic::renormalize(out.x);
        return out;
      }
      case ModelId::SPinch: {
        if (t == 0.0) return X.base;
        const double sp = norm(X);
        const int n = std::max(1, static_cast<int>(std::ceil(std::abs(t) * std::max(1.0, sp) / prm_.h)));
        const double dt = t / n;
        detail::spinch::V4 y;
        y << X.base.x, X.v;
        for (int i = 0; i < n; ++i) {
          y = detail::spinch::step(y, dt);
          if (!detail::spinch::in_chart(y, prm_.chart_bound))
            throw Error(Errc::out_of_chart, "exp_map leaves the S_pinch chart");
        }
        out.x = y.head<2>();
        return out;
      }
    }
    return out;
  }

  TangentVec log_map(const Point& p, const Point& q) const {
    require_model(id_, p.model);
    require_model(id_, q.model);
    switch (id_) {
      case ModelId::E2: return TangentVec{p, q.x - p.x};
      case ModelId::H2:
      case ModelId::H3: {
        const double d = distance(p, q);
        // q + <p,q> p rewritten through the chord d = q - p, using <p,d> = -<d,d>/2
        const Vec dq = q.x - p.x;
        TangentVec L{p, dq - (0.5 * mink(dq, dq)) * p.x};
        L.v += mink(L.v, p.x) * p.x;
        const double f = d > 1e-8 ? d / std::sinh(d) : 1.0 - d * d / 6.0;
        L.v *= f;
        return L;
      }
      case ModelId::SPinch: throw Error(Errc::unsupported, "log_map has no closed form on S_pinch; use geodesic_connect");
    }
    return {};
  }

  // Geodesic on [0, L] from p to q.  `guess` is an optional initial velocity (S_pinch).
  Geodesic geodesic_connect(const Point& p, const Point& q, double L, const Vec* guess = nullptr) const {
    require_model(id_, p.model);
    require_model(id_, q.model);
    if (!(L > 0)) throw Error(Errc::invalid_argument, "geodesic_connect needs L > 0");
    if (same_point(p, q, 1e-14)) throw Error(Errc::degenerate, "geodesic_connect with p = q");
    if (id_ == ModelId::SPinch) {
      check_chart(p);
      check_chart(q);
      const detail::spinch::V2 gs = guess ? detail::spinch::V2(*guess) : detail::spinch::V2::Zero();
      const auto r = detail::spinch::connect(p.x, q.x, L, guess ? &gs : nullptr, prm_);
      if (!r.ok) throw Error(Errc::bvp_nonconvergence, "S_pinch shooting did not converge", r.residual);
      const int n = std::max(1, static_cast<int>(std::ceil(L / prm_.h - 1e-9)));
      return make_spinch(p, r.v0, L / n, 0.0, L);
    }
    TangentVec X = log_map(p, q);
    X.v /= L;
    Geodesic g = make_closed(X, 0.0, L);
    if (is_hyperboloid(id_) && g.speed_ * L > 1e-3) {
      g.has_end_ = true;
      g.end_ = q;
      g.a_end_ = g.speed_ * L;
    }
    return g;
  }

  // Geodesic with initial velocity X on [t_min, t_max]; infinite bounds allowed for closed forms.
  Geodesic geodesic(const TangentVec& X, double t_min, double t_max) const {
    require_model(id_, X.base.model);
    if (!(t_min <= 0 && t_max >= 0)) throw Error(Errc::invalid_argument, "geodesic interval must contain 0");
    if (id_ == ModelId::SPinch) {
      if (!std::isfinite(t_min) || !std::isfinite(t_max))
        throw Error(Errc::invalid_argument, "S_pinch geodesics need a finite interval");
      const double sp = norm(X);
      return make_spinch(X.base, X.v, prm_.h / std::max(1.0, sp), t_min, t_max);
    }
    return make_closed(X, t_min, t_max);
  }

  TangentVec parallel_transport(const Geodesic& geo, const TangentVec& X, double t0, double t1) const {
    require_model(id_, geo.model());
    const Point a = geo.at(t0);
    require_base(a, X);
    (void)geo.at(t1);
    switch (id_) {
      case ModelId::E2: return TangentVec{geo.at(t1), X.v};
      case ModelId::H2:
      case ModelId::H3: {
        const TangentVec e0 = geo.velocity_at(t0);
        const TangentVec e1 = geo.velocity_at(t1);
        const double s2 = geo.speed() * geo.speed();
        const double c = mink(X.v, e0.v) / s2;
        TangentVec out{e1.base, X.v - c * e0.v + c * e1.v};
        out.v += mink(out.v, out.base.x) * out.base.x;
        return out;
      }
      case ModelId::SPinch: {
        using V2 = detail::spinch::V2;
        using V6 = Eigen::Matrix<double, 6, 1>;
        const TangentVec v0 = geo.velocity_at(t0);
        V6 y;
        y << a.x, v0.v, X.v;
        const int n = std::max(1, static_cast<int>(std::ceil(std::abs(t1 - t0) * std::max(1.0, geo.speed()) / prm_.h)));
        const double dt = (t1 - t0) / n;
        auto f = [](double, const V6& s) {
          const V2 x = s.head<2>(), v = s.segment<2>(2), Z = s.tail<2>();
          V6 d;
          d << v, detail::spinch::accel(x, v), detail::spinch::transport_rhs(x, v, Z);
          return d;
        };
        for (int i = 0; i < n; ++i) y = rk4_step(y, 0.0, dt, f);
        return TangentVec{geo.at(t1), y.tail<2>()};
      }
    }
    return {};
  }

  TangentVec curvature_op(const Point& p, const TangentVec& X, const TangentVec& Y, const TangentVec& Z) const {
    require_model(id_, p.model);
    require_base(p, X);
    require_base(p, Y);
    require_base(p, Z);
    return curvature(X, Y, Z);
  }

  // Unchecked R(X,Y)Z.
  TangentVec curvature(const TangentVec& X, const TangentVec& Y, const TangentVec& Z) const {
    switch (id_) {
      case ModelId::E2: return TangentVec{X.base, Vec::Zero(2)};
      case ModelId::H2:
      case ModelId::H3: return TangentVec{X.base, -(inner(Y, Z) * X.v - inner(X, Z) * Y.v)};
      case ModelId::SPinch:
        return TangentVec{X.base, detail::spinch::curvature(X.base.x, X.v, Y.v, Z.v)};
    }
    return {};
  }

  double gauss_curvature(const Point& p) const {
    require_model(id_, p.model);
    switch (id_) {
      case ModelId::E2: return 0.0;
      case ModelId::H2:
      case ModelId::H3: return -1.0;
      case ModelId::SPinch: return detail::spinch::gauss_curvature(p.x);
    }
    return 0;
  }

  TangentVec grad_distance(const Point& p, const Point& q) const {
    require_model(id_, p.model);
    require_model(id_, q.model);
    if (same_point(p, q, 1e-14)) throw Error(Errc::degenerate, "grad_distance with p = q");
    if (id_ == ModelId::SPinch) {
      const Geodesic g = geodesic_connect(p, q, prm_.distance_length);
      return TangentVec{p, -g.velocity().v / g.speed()};
    }
    TangentVec L = log_map(p, q);
    L.v /= -norm(L);
    return L;
  }

  // Orthonormal basis of T_p, smooth in p.
  std::vector<TangentVec> orthonormal_basis(const Point& p) const {
    require_model(id_, p.model);
    std::vector<TangentVec> out;
    const int n = dim();
    if (is_hyperboloid(id_)) {
      const Vec xs = p.x.head(n);
      const double t = p.x(n);
      for (int i = 0; i < n; ++i) {
        Vec e = Vec::Zero(n + 1);
        e(i) = 1.0;
        e.head(n) += xs * (xs(i) / (1.0 + t));
        e(n) = xs(i);
        out.push_back(project(p, e));
      }
    } else {
      const double s = id_ == ModelId::SPinch ? 1.0 / std::sqrt(detail::spinch::conformal(p.x)) : 1.0;
      for (int i = 0; i < n; ++i) {
        Vec e = Vec::Zero(2);
        e(i) = s;
        out.push_back(TangentVec{p, e});
      }
    }
    return out;
  }

  // Vector in T_p from orthonormal-basis coefficients.
  TangentVec from_coords(const Point& p, const Vec& c) const {
    const auto B = orthonormal_basis(p);
    TangentVec X{p, Vec::Zero(p.x.size())};
    for (int i = 0; i < static_cast<int>(B.size()); ++i) X.v += c(i) * B[static_cast<size_t>(i)].v;
    return X;
  }

  Vec to_coords(const TangentVec& X) const {
    const auto B = orthonormal_basis(X.base);
    Vec c(static_cast<int>(B.size()));
    for (int i = 0; i < c.size(); ++i) c(i) = inner(X, B[static_cast<size_t>(i)]);
    return c;
  }

  void check_tangent(const TangentVec& X) const {
    require_model(id_, X.base.model);
    if (X.v.size() != X.base.x.size() || !X.v.allFinite()) throw Error(Errc::not_tangent, "bad tangent components");
    if (is_hyperboloid(id_)) {
      const double r = std::abs(mink(X.v, X.base.x));
      if (r > 1e-10 * (1.0 + X.v.norm() * X.base.x.norm())) throw Error(Errc::not_tangent, "vector not tangent to hyperboloid", r);
    }
  }

  void check_chart(const Point& p) const {
    if (id_ != ModelId::SPinch) return;
    if (!(std::abs(p.x(0)) <= prm_.chart_bound && std::abs(p.x(1)) <= prm_.chart_bound))
      throw Error(Errc::out_of_chart, "point outside the S_pinch chart");
  }

 private:
  Geodesic make_closed(const TangentVec& X, double t_min, double t_max) const {
    Geodesic g;
    g.start_ = X.base;
    g.velocity_ = X;
    g.speed_ = norm(X);
    if (!(g.speed_ > 0)) throw Error(Errc::degenerate, "zero initial velocity");
    g.t_min_ = t_min;
    g.t_max_ = t_max;
    g.params_ = prm_;
    return g;
  }

  Geodesic make_spinch(const Point& p, const Vec& v0, double dt, double t_min, double t_max) const {
    Geodesic g;
    g.start_ = p;
    g.velocity_ = TangentVec{p, v0};
    g.speed_ = norm(g.velocity_);
    if (!(g.speed_ > 0)) throw Error(Errc::degenerate, "zero initial velocity");
    g.t_min_ = t_min;
    g.t_max_ = t_max;
    g.params_ = prm_;
    detail::spinch::V4 y0;
    y0 << p.x, v0;
    g.traj_ = detail::spinch::integrate(y0, dt, t_min, t_max, prm_.chart_bound);
    return g;
  }

  ModelId id_;
  ModelParams prm_;
};

}  // namespace geovar
