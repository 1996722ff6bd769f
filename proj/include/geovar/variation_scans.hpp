#pragma once

#include "fit.hpp"
#include "parallel.hpp"
#include "sampling.hpp"
#include "variation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace geovar {

// Angle between X and Y via atan2, so angles near 0 and pi keep full relative accuracy.
inline double angle_between(const Model& M, const TangentVec& X, const TangentVec& Y) {
  const double xx = M.inner(X, X);
  if (xx <= 0) return 0.0;
  const double xy = M.inner(X, Y);
  const TangentVec rej{Y.base, Y.v - (xy / xx) * X.v};
  return std::atan2(M.norm(rej) * std::sqrt(xx), xy);
}

// Angle between the lines spanned by X and Y, in [0, pi/2].
inline double line_angle(const Model& M, const TangentVec& X, const TangentVec& Y) {
  const double a = angle_between(M, X, Y);
  return std::min(a, M_PI - a);
}

struct VariationConfig {
  Geodesic eta, gamma;
  double r0 = 0, s0 = 0;
};

inline Geodesic unit_geodesic(const Model& M, const TangentVec& X, double lo = -1.0, double hi = 1.0) {
  return M.geodesic(X, lo, hi);
}

// End state (point and velocity) of the unit-speed geodesic from X after time t.
inline TangentVec shoot_state(const Model& M, const TangentVec& X, double t) {
  return M.geodesic(X, 0.0, t).velocity_at(t);
}

// Radius of the ball holding the midpoint of a sampled pair.  Hyperboloid coordinates lose
// about cosh(d)^2 * eps in Minkowski products at distance d from the origin, so pairs are
// centred near it; the models are homogeneous, so placement does not matter otherwise.
inline double default_base_radius(ModelId id) {
  switch (id) {
    case ModelId::E2: return 5.0;
    case ModelId::SPinch: return 0.5;
    default: return 1.0;
  }
}

// Endpoints of a geodesic segment of length rho centred at a random point.
// Returns the unit velocity at p; q is at time rho along it.
inline TangentVec centred_pair(const Model& M, Rng& g, double rho, double base_radius = -1) {
  if (base_radius < 0) base_radius = default_base_radius(M.id());
  const Point m = random_point(M, g, base_radius);
  const TangentVec u = random_unit(M, m, g);
  return M.geodesic(u, -rho / 2, rho / 2).velocity_at(-rho / 2);
}

// eta through p, gamma through q at distance rho, both with random unit directions.
inline VariationConfig random_config(const Model& M, Rng& g, double rho_lo, double rho_hi, double base_radius = -1) {
  const double rho = rho_lo == rho_hi ? rho_lo : log_uniform(g, rho_lo, rho_hi);
  const TangentVec u = centred_pair(M, g, rho, base_radius);
  const TangentVec q = shoot_state(M, u, rho);
  VariationConfig c;
  c.eta = unit_geodesic(M, random_unit(M, u.base, g));
  c.gamma = unit_geodesic(M, random_unit(M, q.base, g));
  return c;
}

// Configuration with prescribed directions relative to the connecting geodesic:
// eta-dot at angle a_eta from sigma-dot(0), gamma-dot at angle a_gamma from sigma-dot(rho).
inline VariationConfig angled_config(const Model& M, Rng& g, const TangentVec& u, double rho, double a_eta,
                                     double a_gamma) {
  const TangentVec qv = shoot_state(M, u, rho);
  VariationConfig c;
  c.eta = unit_geodesic(M, unit_at_angle(M, u, a_eta, g));
  c.gamma = unit_geodesic(M, unit_at_angle(M, qv, a_gamma, g));
  return c;
}

inline GeodesicVariation build_variation(const Model& M, const VariationConfig& c, VariationOptions opt = {}) {
  return GeodesicVariation(M, c.eta, c.gamma, c.r0, c.s0, opt);
}

// ---------------------------------------------------------------------------
// Dichotomy scan in dimension 2.

struct Lemma2dSample {
  int id = 0;
  double rho0 = 0;
  double transversality = 0;  // angle(gamma-dot, +-grad) at gamma(s0)
  double eta_angle = 0;       // angle(eta-dot, +-sigma-dot(0))
  double d2_rs = 0, d3_rss = 0;
  double exponent = 0;        // smallest c with max(|d2|,|d3|) >= e^{-cT}
  std::string error;
};

struct Lemma2dReport {
  ModelId model = ModelId::H2;
  double T = 0;
  double exponent_bound = 10;  // counterexample: both below e^{-exponent_bound T}
  double c2 = 1;               // branch split: eta_angle < e^{-c2 T}
  std::vector<Lemma2dSample> samples;
  double calibrated = 0;       // max exponent over the sample
  double calibrated_c1 = 0;    // over the near-radial branch, from |d3|
  double calibrated_c3 = 0;    // over the other branch, from |d2|
  int worst = -1;
  int counterexamples = 0;
  int failures = 0;
  int near_radial = 0;
};

struct ScanOptions {
  int threads = 1;
  VariationOptions variation;
};

inline Lemma2dReport lemma2d_scan(const Model& M, double T, int n_samples, std::uint64_t seed, ScanOptions so = {},
                                  double exponent_bound = 10, double c2 = 1) {
  if (M.id() != ModelId::H2 && M.id() != ModelId::SPinch) throw Error(Errc::unsupported, "lemma2d_scan needs H2 or S_pinch");
  if (!(T >= 3)) throw Error(Errc::invalid_argument, "T must be at least 3");
  if (n_samples <= 0) throw Error(Errc::invalid_argument, "n_samples must be positive");
  Lemma2dReport rep;
  rep.model = M.id();
  rep.T = T;
  rep.exponent_bound = exponent_bound;
  rep.c2 = c2;
  rep.samples.resize(static_cast<size_t>(n_samples));
  const double rho_hi = M.id() == ModelId::SPinch ? std::min(T, 6.0) : T;
  const double tmin = std::exp(-T);
  parallel_for(static_cast<size_t>(n_samples), so.threads, [&](size_t i) {
    Rng g = rng_for(seed, i);
    Lemma2dSample& s = rep.samples[i];
    s.id = static_cast<int>(i);
    const double rho = log_uniform(g, 3.0, rho_hi);
    const TangentVec u = centred_pair(M, g, rho);
    // half the draws concentrate near the degenerate directions
    double a_eta = uniform(g, 0.0, M_PI);
    if (uniform(g, 0, 1) < 0.5) {
      a_eta = log_uniform(g, std::exp(-2 * T), 1.0);
      if (uniform(g, 0, 1) < 0.5) a_eta = M_PI - a_eta;
    }
    double a_gam = uniform(g, tmin, M_PI - tmin);
    if (uniform(g, 0, 1) < 0.5) {
      a_gam = log_uniform(g, tmin, 1.0);
      if (uniform(g, 0, 1) < 0.5) a_gam = M_PI - a_gam;
    }
    try {
      const VariationConfig c = angled_config(M, g, u, rho, a_eta, a_gam);
      const GeodesicVariation v(M, c.eta, c.gamma, c.r0, c.s0, so.variation);
      s.rho0 = v.rho0();
      s.transversality = line_angle(M, v.gamma_dot(), v.sigma_dotL());
      s.eta_angle = line_angle(M, v.eta_dot(), v.sigma_dot0());
      s.d2_rs = second_variation(v);
      s.d3_rss = third_variation(v);
      const double e2 = -std::log(std::abs(s.d2_rs)) / T, e3 = -std::log(std::abs(s.d3_rss)) / T;
      s.exponent = std::min(e2, e3);
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  });
  for (const auto& s : rep.samples) {
    if (!s.error.empty()) {
      ++rep.failures;
      continue;
    }
    if (rep.worst < 0 || s.exponent > rep.calibrated) {
      rep.calibrated = s.exponent;
      rep.worst = s.id;
    }
    if (s.exponent > exponent_bound) ++rep.counterexamples;
    if (s.eta_angle < std::exp(-c2 * T)) {
      ++rep.near_radial;
      rep.calibrated_c1 = std::max(rep.calibrated_c1, -std::log(std::abs(s.d3_rss)) / T);
    } else {
      rep.calibrated_c3 = std::max(rep.calibrated_c3, -std::log(std::abs(s.d2_rs)) / T);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Coplanarity of the s-acceleration in H3.

struct Lemma3dSample {
  int id = 0;
  double rho0 = 0;
  double angle = 0;    // line angle between A-perp and D_t W_0-perp
  double lhs = 0;      // |<V0perp, Aperp>|
  double rhs = 0;      // |d2_rs| |Aperp| / |DW0perp|
  double rel_err = 0;
  std::string error;
};

struct Lemma3dReport {
  std::vector<Lemma3dSample> samples;
  double max_angle = 0;
  double max_rel_err = 0;
  int worst_angle = -1, worst_identity = -1;
  int failures = 0;
};

inline Lemma3dSample lemma3d_sample(const GeodesicVariation& v) {
  const Model& M = v.model();
  Lemma3dSample s;
  s.rho0 = v.rho0();
  const TangentVec A = v.perp0(s_acceleration(v));
  const TangentVec DW = v.perp0(v.W0().deriv);
  const TangentVec V0 = v.perp0(v.V0().value);
  s.angle = line_angle(M, A, DW);
  s.lhs = std::abs(M.inner(V0, A));
  s.rhs = std::abs(second_variation(v)) * M.norm(A) / M.norm(DW);
  s.rel_err = rel_err(s.lhs, s.rhs);
  return s;
}

inline Lemma3dReport lemma3d_check(const Model& M, int n_samples, std::uint64_t seed, ScanOptions so = {}, double rho_lo = 3,
                                   double rho_hi = 8) {
  if (M.id() != ModelId::H3) throw Error(Errc::unsupported, "lemma3d_check needs H3");
  if (n_samples <= 0) throw Error(Errc::invalid_argument, "n_samples must be positive");
  Lemma3dReport rep;
  rep.samples.resize(static_cast<size_t>(n_samples));
  parallel_for(static_cast<size_t>(n_samples), so.threads, [&](size_t i) {
    Rng g = rng_for(seed, i);
    Lemma3dSample& s = rep.samples[i];
    try {
      const double rho = log_uniform(g, rho_lo, rho_hi);
      const TangentVec u = centred_pair(M, g, rho);
      // keep gamma transverse to sigma so D_t W_0-perp is not degenerate
      const double a_gam = uniform(g, 0.05, M_PI - 0.05);
      const VariationConfig c = angled_config(M, g, u, rho, uniform(g, 0.0, M_PI), a_gam);
      s = lemma3d_sample(GeodesicVariation(M, c.eta, c.gamma, c.r0, c.s0, so.variation));
    } catch (const std::exception& e) {
      s.error = e.what();
    }
    s.id = static_cast<int>(i);
  });
  for (const auto& s : rep.samples) {
    if (!s.error.empty()) {
      ++rep.failures;
      continue;
    }
    if (rep.worst_angle < 0 || s.angle > rep.max_angle) {
      rep.max_angle = s.angle;
      rep.worst_angle = s.id;
    }
    if (rep.worst_identity < 0 || s.rel_err > rep.max_rel_err) {
      rep.max_rel_err = s.rel_err;
      rep.worst_identity = s.id;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Isolation of near-critical points.

struct IsolationSample {
  int id = 0;
  double rho0 = 0;       // phi(r1, s1)
  double r1 = 0, s1 = 0;
  double eps = 0;        // |d_r phi(r1, s1)| actually achieved
  int checked = 0;       // grid points satisfying the separation condition
  int violations = 0;    // |d_r phi| < |r-r1|/32 - eps
  double min_margin = std::numeric_limits<double>::infinity();
  double min_perp2 = std::numeric_limits<double>::infinity();  // min |eta-dot-perp|^2 over the grid
  int perp_violations = 0;
  double min_sinh = std::numeric_limits<double>::infinity();
  double max_coth = 0;
  double closed_form_err = 0;  // max |d2_rr intrinsic - |eta-perp|^2 coth phi| at probe points
  std::string error;
};

struct IsolationReport {
  std::vector<IsolationSample> samples;
  int violations = 0, perp_violations = 0, failures = 0, hypothesis_failures = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  double max_closed_form_err = 0;
  long checked = 0;
};

struct IsolationOptions {
  int grid = 100;
  double eps = 1e-3;       // tilt bound at the near-critical point
  double delta = 1e-2;     // separation floor
  double rho_lo = 6, rho_hi = 10;
  int closed_form_probes = 4;
};

// Geodesic with eta(r1) = p and eta-dot(r1) = X.
inline Geodesic geodesic_through(const Model& M, const TangentVec& X, double r1) {
  const TangentVec start = M.geodesic(X, -r1 - 1e-9, 0.0).velocity_at(-r1);
  return M.geodesic(start, -1.0, 1.5);
}

inline IsolationSample isolation_sample(const Model& M, Rng& g, const IsolationOptions& o, double tilt_eta, double tilt_gamma) {
  IsolationSample s;
  const double rho = uniform(g, o.rho_lo, o.rho_hi);
  const TangentVec u = centred_pair(M, g, rho);
  const TangentVec qv = shoot_state(M, u, rho);
  s.r1 = uniform(g, 0.0, 0.25);
  s.s1 = uniform(g, 0.0, 0.25);
  // common perpendicular, then tilted towards sigma by the given angles
  const TangentVec en = unit_at_angle(M, u, M_PI / 2 - tilt_eta, g);
  const TangentVec gn = unit_at_angle(M, qv, M_PI / 2 - tilt_gamma, g);
  const Geodesic eta = geodesic_through(M, en, s.r1);
  const Geodesic gam = geodesic_through(M, gn, s.s1);
  s.rho0 = M.distance(eta.at(s.r1), gam.at(s.s1));
  auto dr = [&](double r, double sv) {
    const TangentVec e = eta.velocity_at(r);
    const Point q = gam.at(sv);
    return std::pair<double, double>{M.inner(M.grad_distance(e.base, q), e), M.distance(e.base, q)};
  };
  s.eps = std::abs(dr(s.r1, s.s1).first);
  const int N = o.grid;
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      const double r = 0.25 * a / (N - 1), sv = 0.25 * b / (N - 1);
      const auto [d, phi] = dr(r, sv);
      s.min_sinh = std::min(s.min_sinh, std::sinh(phi));
      s.max_coth = std::max(s.max_coth, 1.0 / std::tanh(phi));
      const double perp2 = 1.0 - d * d;
      s.min_perp2 = std::min(s.min_perp2, perp2);
      if (perp2 < 1.0 / 16) ++s.perp_violations;
      const double sep = std::abs(r - s.r1);
      if (sep < std::max(0.5 * std::abs(sv - s.s1), o.delta)) continue;
      ++s.checked;
      const double margin = std::abs(d) - (sep / 32 - s.eps);
      s.min_margin = std::min(s.min_margin, margin);
      if (margin < 0) ++s.violations;
    }
  for (int k = 0; k < o.closed_form_probes; ++k) {
    const double r = uniform(g, 0.0, 0.25), sv = uniform(g, 0.0, 0.25);
    const GeodesicVariation v(M, eta, gam, r, sv);
    const double rr = second_variation_rr_ss(v).first;
    const double ep = M.norm(v.perp0(v.eta_dot()));
    s.closed_form_err = std::max(s.closed_form_err, std::abs(rr - ep * ep / std::tanh(v.rho0())));
  }
  return s;
}

inline IsolationReport isolation_check(const Model& M, int n_samples, std::uint64_t seed, IsolationOptions o = {}, int threads = 1) {
  if (!is_hyperboloid(M.id())) throw Error(Errc::unsupported, "isolation_check needs H2 or H3");
  if (n_samples <= 0) throw Error(Errc::invalid_argument, "n_samples must be positive");
  if (o.grid < 2) throw Error(Errc::invalid_argument, "grid must be at least 2");
  IsolationReport rep;
  rep.samples.resize(static_cast<size_t>(n_samples));
  parallel_for(static_cast<size_t>(n_samples), threads, [&](size_t i) {
    Rng g = rng_for(seed, i);
    IsolationSample& s = rep.samples[i];
    try {
      // sample 0 is the exact common perpendicular
      const double te = i == 0 ? 0.0 : uniform(g, -1.0, 1.0) * std::asin(o.eps);
      const double tg = i == 0 ? 0.0 : uniform(g, -1.0, 1.0) * std::asin(o.eps);
      s = isolation_sample(M, g, o, te, tg);
    } catch (const std::exception& e) {
      s.error = e.what();
    }
    s.id = static_cast<int>(i);
  });
  for (const auto& s : rep.samples) {
    if (!s.error.empty()) {
      ++rep.failures;
      continue;
    }
    if (s.min_sinh < 64 || s.max_coth > 1.5) ++rep.hypothesis_failures;
    rep.violations += s.violations;
    rep.perp_violations += s.perp_violations;
    rep.checked += s.checked;
    rep.min_margin = std::min(rep.min_margin, s.min_margin);
    rep.max_closed_form_err = std::max(rep.max_closed_form_err, s.closed_form_err);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Growth of iterated partials with distance.

struct GrowthRow {
  double rho = 0;
  std::vector<double> max_sum;  // index k: max over configs of sum_{|alpha|=k} |d^alpha phi|; k < 2 unused
  double max_rr = 0;            // max |d2_rr| over configs (k = 2 component)
  int failures = 0;
};

struct GrowthReport {
  ModelId model = ModelId::H2;
  int max_order = 2;
  std::vector<GrowthRow> rows;
  std::vector<LinearFit> fits;  // index k: log(max_sum) against rho
  LinearFit rr_fit;
};

inline GrowthReport growth_scan(const Model& M, int max_order, const std::vector<double>& rho_list, int n_per_rho,
                                std::uint64_t seed, ScanOptions so = {}) {
  if (max_order < 2 || max_order > 4) throw Error(Errc::invalid_argument, "growth_scan orders 2..4");
  if (rho_list.size() < 2) throw Error(Errc::invalid_argument, "rho_list needs two or more values");
  if (n_per_rho <= 0) throw Error(Errc::invalid_argument, "n_per_rho must be positive");
  GrowthReport rep;
  rep.model = M.id();
  rep.max_order = max_order;
  const size_t nr = rho_list.size(), nc = static_cast<size_t>(n_per_rho);
  std::vector<PartialsReport> all(nr * nc);
  std::vector<char> ok(nr * nc, 0);
  parallel_for(nr * nc, so.threads, [&](size_t idx) {
    Rng g = rng_for(seed, idx);
    const double rho = rho_list[idx / nc];
    try {
      const VariationConfig c = random_config(M, g, rho, rho);
      all[idx] = fd_partials(M, c.eta, c.gamma, c.r0, c.s0, max_order, so.variation);
      ok[idx] = 1;
    } catch (const std::exception&) {
    }
  });
  for (size_t a = 0; a < nr; ++a) {
    GrowthRow row;
    row.rho = rho_list[a];
    row.max_sum.assign(static_cast<size_t>(max_order + 1), 0.0);
    double rr = 0;
    for (size_t b = 0; b < nc; ++b) {
      const size_t idx = a * nc + b;
      if (!ok[idx]) {
        ++row.failures;
        continue;
      }
      for (int k = 2; k <= max_order; ++k) {
        double sum = 0;
        for (int i = 0; i <= k; ++i) sum += std::abs(all[idx].at(i, k - i));
        row.max_sum[static_cast<size_t>(k)] = std::max(row.max_sum[static_cast<size_t>(k)], sum);
      }
      rr = std::max(rr, std::abs(all[idx].at(2, 0)));
    }
    row.max_rr = rr;
    rep.rows.push_back(row);
  }
  rep.fits.assign(static_cast<size_t>(max_order + 1), LinearFit{});
  std::vector<double> xs;
  for (const auto& r : rep.rows) xs.push_back(r.rho);
  for (int k = 2; k <= max_order; ++k) {
    std::vector<double> ys;
    for (const auto& r : rep.rows) ys.push_back(std::log(r.max_sum[static_cast<size_t>(k)]));
    rep.fits[static_cast<size_t>(k)] = fit_line(xs, ys);
  }
  std::vector<double> ys;
  for (const auto& r : rep.rows) ys.push_back(std::log(r.max_rr));
  rep.rr_fit = fit_line(xs, ys);
  return rep;
}

}  // namespace geovar
