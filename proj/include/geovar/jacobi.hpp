#pragma once

#include "models.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace geovar {

struct JacobiOptions {
  bool force_ode = false;  // integrate even when a closed form exists
  double h = 1e-3;
};

struct JacobiState {
  TangentVec value;
  TangentVec deriv;  // D_t
};

// Parallel orthonormal frame (sigma-dot, E_1..E_{n-1}) along a unit-speed geodesic plus the
// scalar fundamental pair c'' = -K c, s'' = -K s (c(0)=1, c'(0)=0, s(0)=0, s'(0)=1).
// In all four models R(E_i, sigma')sigma' = K E_i, so one scalar pair serves every normal direction.
class JacobiFrame {
 public:
  struct Fund {
    double c, dc, s, ds;
  };

  JacobiFrame(const Model& M, const Geodesic& geo, JacobiOptions opt = {}) : M_(M), geo_(geo), opt_(opt) {
    require_model(M.id(), geo.model());
    if (std::abs(geo.speed() - 1.0) > 1e-8) throw Error(Errc::invalid_argument, "Jacobi fields need a unit-speed geodesic");
    const TangentVec v0 = geo.velocity_at(0.0);
    if (is_hyperboloid(M.id())) {
      // normals orthogonal to p0 and v0 are constant ambient vectors along the geodesic
      for (const auto& b : M.orthonormal_basis(v0.base)) {
        TangentVec e = b;
        e.v -= M.inner(e, v0) * v0.v;
        for (const auto& f : normals0_) e.v -= M.inner(e, f) * f.v;
        const double n = M.norm(e);
        if (n > 1e-6) normals0_.push_back(TangentVec{e.base, e.v / n});
        if (static_cast<int>(normals0_.size()) == M.dim() - 1) break;
      }
    } else {
      normals0_.push_back(rotate(v0));
    }
    const bool closed = M.id() != ModelId::SPinch && !opt.force_ode;
    if (!closed) integrate();
  }

  const Model& model() const { return M_; }
  const Geodesic& geodesic() const { return geo_; }
  int normal_count() const { return static_cast<int>(normals0_.size()); }

  TangentVec tangent(double t) const { return geo_.velocity_at(t); }

  TangentVec normal(int i, double t) const {
    if (is_hyperboloid(M_.id())) {
      // The stored normal is only orthogonal to the geodesic's plane up to rounding, and the
      // leak grows like e^t; strip the in-plane part at t (H3 normals do not mix under this).
      const TangentVec T = geo_.velocity_at(t);
      TangentVec e{T.base, normals0_[static_cast<size_t>(i)].v};
      e.v += mink(e.v, T.base.x) * T.base.x;
      e.v -= (mink(e.v, T.v) / mink(T.v, T.v)) * T.v;
      e.v /= std::sqrt(mink(e.v, e.v));
      return e;
    }
    if (M_.id() == ModelId::E2) return TangentVec{geo_.at(t), normals0_[0].v};
    return rotate(geo_.velocity_at(t));
  }

  double curvature(double t) const {
    if (M_.id() == ModelId::SPinch) return M_.gauss_curvature(geo_.at(t));
    return M_.id() == ModelId::E2 ? 0.0 : -1.0;
  }

  Fund fundamental(double t) const {
    if (!geo_.contains(t)) throw Error(Errc::out_of_interval, "Jacobi evaluation outside geodesic interval");
    if (!nodes_.empty()) {
      long k = static_cast<long>(std::floor(t / dt_));
      k = std::clamp(k, k_lo_, k_hi_);
      const double t0 = static_cast<double>(k) * dt_;
      Eigen::Vector4d y = nodes_[static_cast<size_t>(k - k_lo_)];
      const double tau = t - t0;
      if (tau != 0.0) y = step(y, t0, tau);
      return {y(0), y(1), y(2), y(3)};
    }
    if (M_.id() == ModelId::E2) return {1.0, 0.0, t, 1.0};
    return {std::cosh(t), std::sinh(t), std::sinh(t), std::cosh(t)};
  }

  // Coefficients of X in the frame: tangential, then normals.
  Eigen::VectorXd coords(const TangentVec& X, double t) const {
    Eigen::VectorXd c(1 + normal_count());
    c(0) = M_.inner(X, tangent(t));
    for (int i = 0; i < normal_count(); ++i) c(1 + i) = M_.inner(X, normal(i, t));
    return c;
  }

  TangentVec assemble(const Eigen::VectorXd& c, double t) const {
    TangentVec T = tangent(t);
    TangentVec X{T.base, c(0) * T.v};
    for (int i = 0; i < normal_count(); ++i) X.v += c(1 + i) * normal(i, t).v;
    return X;
  }

  double step_size() const { return dt_; }

 private:
  // +90 degree chart rotation; an isometry of each tangent plane for conformal metrics.
  static TangentVec rotate(const TangentVec& v) {
    Vec r(2);
    r << -v.v(1), v.v(0);
    return TangentVec{v.base, r};
  }

  Eigen::Vector4d step(const Eigen::Vector4d& y, double t, double h) const {
    return rk4_step(y, t, h, [this](double s, const Eigen::Vector4d& u) {
      const double K = curvature(s);
      return Eigen::Vector4d(u(1), -K * u(0), u(3), -K * u(2));
    });
  }

  // Nodes at k*dt inside the interval; off-grid times take one signed partial step.
  void integrate() {
    if (!std::isfinite(geo_.t_min()) || !std::isfinite(geo_.t_max()))
      throw Error(Errc::invalid_argument, "ODE Jacobi evaluation needs a finite geodesic interval");
    dt_ = opt_.h;
    k_lo_ = std::min(0L, static_cast<long>(std::ceil(geo_.t_min() / dt_ - 1e-9)));
    k_hi_ = std::max(0L, static_cast<long>(std::floor(geo_.t_max() / dt_ + 1e-9)));
    nodes_.assign(static_cast<size_t>(k_hi_ - k_lo_ + 1), Eigen::Vector4d::Zero());
    const size_t i0 = static_cast<size_t>(-k_lo_);
    nodes_[i0] = Eigen::Vector4d(1, 0, 0, 1);
    auto time = [&](size_t i) { return static_cast<double>(static_cast<long>(i) + k_lo_) * dt_; };
    for (size_t i = i0 + 1; i < nodes_.size(); ++i) nodes_[i] = step(nodes_[i - 1], time(i - 1), dt_);
    for (size_t i = i0; i-- > 0;) nodes_[i] = step(nodes_[i + 1], time(i + 1), -dt_);
  }

  Model M_;
  Geodesic geo_;
  JacobiOptions opt_;
  std::vector<TangentVec> normals0_;
  double dt_ = 0;
  long k_lo_ = 0, k_hi_ = 0;
  std::vector<Eigen::Vector4d> nodes_;
};

// Field along a unit-speed geodesic; immutable once built.
class JacobiField {
 public:
  JacobiField(std::shared_ptr<const JacobiFrame> frame, const TangentVec& X0, const TangentVec& D0)
      : frame_(std::move(frame)), X0_(X0), D0_(D0) {
    const Point p = frame_->geodesic().at(0.0);
    require_base(p, X0);
    require_base(p, D0);
    a0_ = frame_->coords(X0, 0.0);
    da0_ = frame_->coords(D0, 0.0);
  }

  const JacobiFrame& frame() const { return *frame_; }
  std::shared_ptr<const JacobiFrame> frame_ptr() const { return frame_; }
  const Geodesic& geodesic() const { return frame_->geodesic(); }
  const TangentVec& value0() const { return X0_; }
  const TangentVec& deriv0() const { return D0_; }

  JacobiState at(double t) const {
    const auto f = frame_->fundamental(t);
    Eigen::VectorXd a(a0_.size()), da(a0_.size());
    // tangential part is affine in t
    a(0) = a0_(0) + t * da0_(0);
    da(0) = da0_(0);
    for (int i = 1; i < a0_.size(); ++i) {
      a(i) = f.c * a0_(i) + f.s * da0_(i);
      da(i) = f.dc * a0_(i) + f.ds * da0_(i);
    }
    return {frame_->assemble(a, t), frame_->assemble(da, t)};
  }

 private:
  std::shared_ptr<const JacobiFrame> frame_;
  TangentVec X0_, D0_;
  Eigen::VectorXd a0_, da0_;
};

inline std::shared_ptr<const JacobiFrame> make_frame(const Model& M, const Geodesic& geo, JacobiOptions opt = {}) {
  return std::make_shared<const JacobiFrame>(M, geo, opt);
}

inline JacobiState jacobi_ivp(const Model& M, const Geodesic& geo, const TangentVec& X0, const TangentVec& D0, double t,
                              JacobiOptions opt = {}) {
  return JacobiField(make_frame(M, geo, opt), X0, D0).at(t);
}

// Two-point problem on [0, L] (L = geo.t_max()) by superposition of the fundamental solutions.
inline JacobiField jacobi_bvp(std::shared_ptr<const JacobiFrame> frame, const TangentVec& X_start, const TangentVec& X_end) {
  const double L = frame->geodesic().t_max();
  if (!(L > 0) || !std::isfinite(L)) throw Error(Errc::invalid_argument, "jacobi_bvp needs a finite interval [0, L]");
  const Eigen::VectorXd a = frame->coords(X_start, 0.0);
  const Eigen::VectorXd b = frame->coords(X_end, L);
  const auto f = frame->fundamental(L);
  // end-value map of the normal block is s(L) I; its condition is 1 but it degenerates at conjugate points
  if (!(std::abs(f.s) > 1e-12 * std::max(1.0, L))) throw Error(Errc::singular, "Jacobi end-value map is singular", f.s);
  Eigen::VectorXd d(a.size());
  d(0) = (b(0) - a(0)) / L;
  for (int i = 1; i < a.size(); ++i) d(i) = (b(i) - f.c * a(i)) / f.s;
  const Point p = frame->geodesic().at(0.0);
  TangentVec X0 = frame->assemble(a, 0.0), D0 = frame->assemble(d, 0.0);
  X0.base = p;
  D0.base = p;
  return JacobiField(std::move(frame), X0, D0);
}

inline JacobiField jacobi_bvp(const Model& M, const Geodesic& geo, const TangentVec& X_start, const TangentVec& X_end,
                              JacobiOptions opt = {}) {
  return jacobi_bvp(make_frame(M, geo, opt), X_start, X_end);
}

struct NormalSplit {
  TangentVec tangential, normal;
};

inline NormalSplit normal_decompose(const Model& M, const TangentVec& X, const TangentVec& unit_velocity) {
  TangentVec T{X.base, M.inner(X, unit_velocity) * unit_velocity.v};
  TangentVec N{X.base, X.v - T.v};
  return {T, N};
}

inline NormalSplit normal_decompose(const JacobiField& J, double t) {
  return normal_decompose(J.frame().model(), J.at(t).value, J.frame().tangent(t));
}

using JacobiSource = std::function<TangentVec(double)>;

// D_t^2 X + R(X, sigma')sigma' + S = 0, RK4 in the parallel frame.
inline JacobiState nonhomog_jacobi_ivp(const Model& M, const Geodesic& geo, const TangentVec& X0, const TangentVec& D0,
                                       const JacobiSource& S, double t, JacobiOptions opt = {}) {
  const JacobiFrame frame(M, geo, JacobiOptions{false, opt.h});
  if (!geo.contains(t)) throw Error(Errc::out_of_interval, "Jacobi evaluation outside geodesic interval");
  const int m = 1 + frame.normal_count();
  Eigen::VectorXd y(2 * m);
  y << frame.coords(X0, 0.0), frame.coords(D0, 0.0);
  auto rhs = [&](double s, const Eigen::VectorXd& u) {
    const Eigen::VectorXd src = frame.coords(S(s), s);
    const double K = frame.curvature(s);
    Eigen::VectorXd d(2 * m);
    d.head(m) = u.tail(m);
    d(m) = -src(0);
    for (int i = 1; i < m; ++i) d(m + i) = -K * u(i) - src(i);
    return d;
  };
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(t) / opt.h - 1e-9)));
  const double dt = t / n;
  for (int i = 0; i < n; ++i) y = rk4_step(y, i * dt, dt, rhs);
  return {frame.assemble(y.head(m), t), frame.assemble(y.tail(m), t)};
}

struct RauchSample {
  double t, norm, lower, upper, violation;
};

struct RauchReport {
  std::vector<RauchSample> samples;
  double max_violation = 0;    // relative, positive means outside the envelope
  double worst_t = 0;
  double lower_gap = 0;        // max |norm/lower - 1|
  double upper_gap = 0;        // max |norm/upper - 1|
};

// Samples t|D0perp| <= |W_t perp| <= sinh(t)|D0perp| for W_0 = 0.
inline RauchReport rauch_check(const Model& M, const Geodesic& geo, const TangentVec& D0, double t_max, int n_samples = 64,
                               JacobiOptions opt = {}) {
  const auto frame = make_frame(M, geo, opt);
  const TangentVec v0 = frame->tangent(0.0);
  const TangentVec zero{v0.base, Vec::Zero(v0.v.size())};
  const JacobiField J(frame, zero, D0);
  const double d0 = M.norm(normal_decompose(M, D0, v0).normal);
  RauchReport rep;
  for (int i = 1; i <= n_samples; ++i) {
    const double t = t_max * i / n_samples;
    const double w = M.norm(normal_decompose(J, t).normal);
    RauchSample s{t, w, t * d0, std::sinh(t) * d0, 0.0};
    s.violation = std::max((s.lower - w) / s.lower, (w - s.upper) / s.upper);
    rep.lower_gap = std::max(rep.lower_gap, std::abs(w / s.lower - 1.0));
    rep.upper_gap = std::max(rep.upper_gap, std::abs(w / s.upper - 1.0));
    if (i == 1 || s.violation > rep.max_violation) {
      rep.max_violation = s.violation;
      rep.worst_t = t;
    }
    rep.samples.push_back(s);
  }
  return rep;
}

}  // namespace geovar
