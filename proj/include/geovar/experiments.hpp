#pragma once

// Drivers that bundle module operations into the scans run by the CLI and the acceptance suite.

#include "jacobi.hpp"
#include "parallel.hpp"
#include "sampling.hpp"
#include "variation_scans.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace geovar {

// |a-b| / max(|a|, |b|, floor)
inline double scaled_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// ---------------------------------------------------------------------------
// Intrinsic vs normal-coordinate vs finite-difference mixed partials.

struct AgreementSample {
  int id = 0;
  double rho0 = 0;
  double d2_int = 0, d2_nc = 0, d2_fd = 0;
  double d3_int = 0, d3_nc = 0, d3_fd = 0;
  double e2 = 0, e3 = 0;  // intrinsic vs normal coordinates
  double e_fd = 0;        // worst of the four analytic-vs-fd comparisons
  std::string error;
};

struct AgreementReport {
  ModelId model = ModelId::H2;
  double floor = 1e-12;
  std::vector<AgreementSample> samples;
  double max_e2 = 0, max_e3 = 0, max_fd = 0;
  int worst_e2 = -1, worst_e3 = -1, worst_fd = -1;
  int failures = 0;
};

inline AgreementReport variation_agreement(const Model& M, int n, std::uint64_t seed, double rho_lo = 3,
                                           double rho_hi = 10, int threads = 1, double floor = 1e-12) {
  if (n <= 0) throw Error(Errc::invalid_argument, "sample count must be positive");
  if (!(rho_lo > 0) || rho_hi < rho_lo) throw Error(Errc::invalid_argument, "bad rho range");
  AgreementReport rep;
  rep.model = M.id();
  rep.floor = floor;
  rep.samples.resize(static_cast<size_t>(n));
  parallel_for(static_cast<size_t>(n), threads, [&](size_t i) {
    AgreementSample& s = rep.samples[i];
    s.id = static_cast<int>(i);
    try {
      Rng g = rng_for(seed, i);
      const auto v = build_variation(M, random_config(M, g, rho_lo, rho_hi));
      s.rho0 = v.rho0();
      const auto a = intrinsic_partials(v), c = normal_coord_partials(v), f = fd_partials(v, 3);
      s.d2_int = *a.d2_rs;
      s.d3_int = *a.d3_rss;
      s.d2_nc = *c.d2_rs;
      s.d3_nc = *c.d3_rss;
      s.d2_fd = *f.d2_rs;
      s.d3_fd = *f.d3_rss;
      s.e2 = scaled_err(s.d2_int, s.d2_nc, floor);
      s.e3 = scaled_err(s.d3_int, s.d3_nc, floor);
      s.e_fd = std::max({scaled_err(s.d2_int, s.d2_fd, floor), scaled_err(s.d2_nc, s.d2_fd, floor),
                         scaled_err(s.d3_int, s.d3_fd, floor), scaled_err(s.d3_nc, s.d3_fd, floor)});
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  });
  for (const auto& s : rep.samples) {
    if (!s.error.empty()) {
      ++rep.failures;
      continue;
    }
    if (rep.worst_e2 < 0 || s.e2 > rep.max_e2) rep.max_e2 = s.e2, rep.worst_e2 = s.id;
    if (rep.worst_e3 < 0 || s.e3 > rep.max_e3) rep.max_e3 = s.e3, rep.worst_e3 = s.id;
    if (rep.worst_fd < 0 || s.e_fd > rep.max_fd) rep.max_fd = s.e_fd, rep.worst_fd = s.id;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Closed forms in H2: d2_rr = |eta-perp|^2 coth rho0, |d2_rs| = csch rho0 |eta-perp| |gamma-perp|.

struct ClosedFormSample {
  int id = 0;
  double rho0 = 0;
  double d2_rr = 0, d2_rr_closed = 0;
  double d2_rs = 0, d2_rs_closed = 0;  // absolute values
  double err = 0;                      // max of the two absolute errors
  std::string error;
};

struct ClosedFormReport {
  std::vector<ClosedFormSample> samples;
  double max_err_rr = 0, max_err_rs = 0;
  int worst = -1;
  int failures = 0;
};

inline ClosedFormReport h2_closed_form_check(int n, std::uint64_t seed, double rho_lo = 3, double rho_hi = 10,
                                             int threads = 1) {
  if (n <= 0) throw Error(Errc::invalid_argument, "sample count must be positive");
  const Model H(ModelId::H2);
  ClosedFormReport rep;
  rep.samples.resize(static_cast<size_t>(n));
  parallel_for(static_cast<size_t>(n), threads, [&](size_t i) {
    ClosedFormSample& s = rep.samples[i];
    s.id = static_cast<int>(i);
    try {
      Rng g = rng_for(seed, i);
      const auto v = build_variation(H, random_config(H, g, rho_lo, rho_hi));
      s.rho0 = v.rho0();
      const auto a = intrinsic_partials(v, false);
      const double en = H.norm(v.perp0(v.eta_dot())), gn = H.norm(v.perpL(v.gamma_dot()));
      s.d2_rr = *a.d2_rr;
      s.d2_rr_closed = *hyperbolic_closed_form(v).d2_rr;
      s.d2_rs = std::abs(*a.d2_rs);
      s.d2_rs_closed = en * gn / std::sinh(s.rho0);
      s.err = std::max(std::abs(s.d2_rr - s.d2_rr_closed), std::abs(s.d2_rs - s.d2_rs_closed));
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  });
  for (const auto& s : rep.samples) {
    if (!s.error.empty()) {
      ++rep.failures;
      continue;
    }
    rep.max_err_rr = std::max(rep.max_err_rr, std::abs(s.d2_rr - s.d2_rr_closed));
    rep.max_err_rs = std::max(rep.max_err_rs, std::abs(s.d2_rs - s.d2_rs_closed));
    if (rep.worst < 0 || s.err > rep.samples[static_cast<size_t>(rep.worst)].err) rep.worst = s.id;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Rauch envelope t|D0perp| <= |W_t perp| <= sinh(t)|D0perp| over random geodesics.

struct RauchScanRow {
  int id = 0;
  double max_violation = 0, worst_t = 0, lower_gap = 0, upper_gap = 0;
  std::string error;
};

struct RauchScanReport {
  ModelId model = ModelId::SPinch;
  std::vector<RauchScanRow> rows;
  double max_violation = 0;
  int worst = -1;
  int failures = 0;
  double max_lower_gap = 0, max_upper_gap = 0;  // max |norm/envelope - 1|, 0 on the equality branches
};

inline RauchScanReport rauch_scan(const Model& M, int n, std::uint64_t seed, double t_max = 8, int n_t = 32,
                                  double base_radius = 0.5, int threads = 1, JacobiOptions opt = {}) {
  if (n <= 0) throw Error(Errc::invalid_argument, "sample count must be positive");
  RauchScanReport rep;
  rep.model = M.id();
  rep.rows.resize(static_cast<size_t>(n));
  parallel_for(static_cast<size_t>(n), threads, [&](size_t i) {
    RauchScanRow& row = rep.rows[i];
    row.id = static_cast<int>(i);
    try {
      Rng g = rng_for(seed, i);
      const Point p = random_point(M, g, base_radius);
      const TangentVec u = random_unit(M, p, g);
      const Geodesic geo = M.geodesic(u, 0.0, t_max);
      const auto r = rauch_check(M, geo, unit_at_angle(M, u, M_PI / 2, g), t_max, n_t, opt);
      row.max_violation = r.max_violation;
      row.worst_t = r.worst_t;
      row.lower_gap = r.lower_gap;
      row.upper_gap = r.upper_gap;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  bool first = true;
  for (const auto& r : rep.rows) {
    if (!r.error.empty()) {
      ++rep.failures;
      continue;
    }
    if (first || r.max_violation > rep.max_violation) rep.max_violation = r.max_violation, rep.worst = r.id;
    rep.max_lower_gap = std::max(rep.max_lower_gap, r.lower_gap);
    rep.max_upper_gap = std::max(rep.max_upper_gap, r.upper_gap);
    first = false;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Closed-form Jacobi fields against the RK4 integration of the Jacobi equation.

struct JacobiOdeReport {
  ModelId model = ModelId::H2;
  int n = 0;
  double max_dev = 0;  // max coordinate deviation of value and derivative
  double worst_t = 0;
  int worst = -1;
};

inline JacobiOdeReport jacobi_ode_check(const Model& M, int n, std::uint64_t seed, double t_max = 10, double h = 1e-3,
                                        int n_t = 100, int threads = 1) {
  if (M.id() != ModelId::H2 && M.id() != ModelId::H3 && M.id() != ModelId::E2)
    throw Error(Errc::unsupported, "jacobi closed forms exist for h2, h3 and e2 only");
  if (n <= 0 || n_t <= 0) throw Error(Errc::invalid_argument, "sample counts must be positive");
  JacobiOdeReport rep;
  rep.model = M.id();
  rep.n = n;
  std::vector<double> dev(static_cast<size_t>(n)), at(static_cast<size_t>(n));
  parallel_for(static_cast<size_t>(n), threads, [&](size_t i) {
    Rng g = rng_for(seed, i);
    const Point p = random_point(M, g, 2.0);
    const Geodesic geo = M.geodesic(random_unit(M, p, g), 0.0, t_max);
    const TangentVec X0 = random_unit(M, p, g), D0 = random_unit(M, p, g);
    const JacobiField A(make_frame(M, geo), X0, D0);
    const JacobiField B(make_frame(M, geo, {true, h}), X0, D0);
    for (int k = 0; k <= n_t; ++k) {
      const double t = t_max * k / n_t;
      const auto a = A.at(t), b = B.at(t);
      const double d = std::max((a.value.v - b.value.v).norm(), (a.deriv.v - b.deriv.v).norm());
      if (d > dev[i]) dev[i] = d, at[i] = t;
    }
  });
  for (size_t i = 0; i < dev.size(); ++i)
    if (rep.worst < 0 || dev[i] > rep.max_dev) rep.max_dev = dev[i], rep.worst_t = at[i], rep.worst = static_cast<int>(i);
  return rep;
}

}  // namespace geovar
