#include <geovar/variation_scans.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace geovar;

namespace {

Vec v2(double a, double b) { Vec v(2); v << a, b; return v; }

// eta(r) = (r, 1), gamma(s) = (s, 0)
VariationConfig parallel_lines(const Model& E) {
  VariationConfig c;
  c.eta = E.geodesic({E.point(v2(0, 1)), v2(1, 0)}, -1, 1);
  c.gamma = E.geodesic({E.point(v2(0, 0)), v2(1, 0)}, -1, 1);
  return c;
}

// eta-dot = sign * sigma-dot(0); gamma random.
VariationConfig radial(const Model& M, Rng& g, double rho, double sign) {
  const TangentVec u = centred_pair(M, g, rho);
  const TangentVec q = shoot_state(M, u, rho);
  VariationConfig c;
  c.eta = unit_geodesic(M, {u.base, sign * u.v});
  c.gamma = unit_geodesic(M, unit_at_angle(M, q, uniform(g, 0.3, 2.8), g));
  return c;
}

double scale_rel(double a, double b, double floor) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); }

}  // namespace

TEST(BuildVariation, ParallelLines) {
  Model E(ModelId::E2);
  const auto v = build_variation(E, parallel_lines(E));
  EXPECT_NEAR(v.rho0(), 1.0, 1e-14);
  EXPECT_NEAR(v.sigma().velocity().v(0), 0.0, 1e-14);
  EXPECT_NEAR(v.sigma().velocity().v(1), -1.0, 1e-14);
  const auto [dr, ds] = phi_first_partials(v);
  EXPECT_NEAR(dr, 0.0, 1e-14);
  EXPECT_NEAR(ds, 0.0, 1e-14);
}

TEST(BuildVariation, UnitSpeedAndEndpoints) {
  Model H(ModelId::H2);
  Rng g = rng_for(1, 0);
  const VariationConfig c = random_config(H, g, 3.0, 3.0);
  const auto v = build_variation(H, c);
  EXPECT_NEAR(v.rho0(), 3.0, 1e-10);
  EXPECT_LE(std::abs(H.inner(v.V0().value, v.V0().value) - 1.0), 1e-10);
  EXPECT_NEAR(H.norm(v.sigma().velocity()), 1.0, 1e-12);
}

TEST(BuildVariation, SPinchEndpointResiduals) {
  Model S(ModelId::SPinch);
  for (int i = 0; i < 5; ++i) {
    Rng g = rng_for(2, static_cast<std::uint64_t>(i));
    const VariationConfig c = random_config(S, g, 3.0, 5.0);
    const auto v = build_variation(S, c);
    const TangentVec e = v.eta_dot(), gd = v.gamma_dot();
    EXPECT_LE((v.sigma().at(0).x - e.base.x).norm(), 1e-8);
    EXPECT_LE((v.sigma().at(v.rho0()).x - gd.base.x).norm(), 1e-8);
    EXPECT_LE(S.norm({e.base, v.V0().value.v - e.v}), 1e-8);
    EXPECT_LE(S.norm(v.VL().value), 1e-8);
    EXPECT_LE(S.norm(v.W0().value), 1e-8);
    EXPECT_LE(S.norm({gd.base, v.WL().value.v - gd.v}), 1e-8);
    EXPECT_NEAR(S.norm(v.sigma_dot0()), 1.0, 1e-8);
  }
}

TEST(BuildVariation, RejectsClosePairsAndMixedModels) {
  Model E(ModelId::E2), H(ModelId::H2);
  VariationConfig c;
  c.eta = E.geodesic({E.point(v2(0, 0.2)), v2(1, 0)}, -1, 1);
  c.gamma = E.geodesic({E.point(v2(0, 0)), v2(1, 0)}, -1, 1);
  try {
    build_variation(E, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::degenerate);
  }
  EXPECT_THROW(build_variation(H, parallel_lines(E)), Error);
}

TEST(SecondVariation, ParallelLinesAllRoutes) {
  Model E(ModelId::E2);
  const auto c = parallel_lines(E);
  const auto v = build_variation(E, c);
  EXPECT_NEAR(second_variation(v), -1.0, 1e-12);
  const auto nc = normal_coord_partials(v);
  EXPECT_NEAR(*nc.d2_rs, -1.0, 1e-12);
  const auto fd = fd_partials(v, 4);
  EXPECT_NEAR(*fd.d2_rs, -1.0, 1e-8);
  // phi = sqrt((s-r)^2 + 1): rr = ss = 1, third = 0
  const auto [rr, ss] = second_variation_rr_ss(v);
  EXPECT_NEAR(rr, 1.0, 1e-12);
  EXPECT_NEAR(ss, 1.0, 1e-12);
  EXPECT_NEAR(third_variation(v), 0.0, 1e-9);
  EXPECT_NEAR(*nc.d3_rss, 0.0, 1e-9);
  EXPECT_NEAR(*fd.d3_rss, 0.0, 1e-8);
  // d^4 phi / dr^2 ds^2 at 0 is -3 for sqrt(u^2+1)
  EXPECT_NEAR(fd.at(2, 2), -3.0, 1e-6);
}

TEST(SecondVariation, RadialEta) {
  for (ModelId id : {ModelId::E2, ModelId::H2, ModelId::H3}) {
    Model M(id);
    for (double sign : {1.0, -1.0}) {
      Rng g = rng_for(3, sign > 0 ? 0 : 1);
      const auto v = build_variation(M, radial(M, g, 4.0, sign));
      EXPECT_NEAR(phi_first_partials(v).first, -sign, 1e-10);
      EXPECT_LE(M.norm(v.perp0(v.V0().value)), 1e-9);
      EXPECT_NEAR(second_variation(v), 0.0, 1e-10);
      EXPECT_NEAR(second_variation_rr_ss(v).first, 0.0, 1e-10);
      const TangentVec dw = v.perp0(v.W0().deriv);
      const double dw2 = M.inner(dw, dw);
      EXPECT_NEAR(third_variation(v), sign * dw2, 1e-8 * std::max(1.0, dw2));
      if (sign > 0) {
        // branch of the dichotomy where the third derivative carries the bound
        const double gp = M.norm(v.perpL(v.gamma_dot()));
        const double lo = gp / std::sinh(v.rho0());
        EXPECT_GE(std::abs(third_variation(v)), lo * lo * (1 - 1e-9));
      }
    }
  }
}

TEST(SecondVariation, HyperbolicPerpendicular) {
  Model H(ModelId::H2);
  Rng g = rng_for(4, 0);
  const TangentVec u = centred_pair(H, g, 3.0);
  const VariationConfig c = angled_config(H, g, u, 3.0, M_PI / 2, M_PI / 2);
  const auto v = build_variation(H, c);
  EXPECT_NEAR(second_variation_rr_ss(v).first, 1.0 / std::tanh(3.0), 1e-10);
  EXPECT_NEAR(second_variation_rr_ss(v).first, 1.00496, 1e-5);
  EXPECT_NEAR(std::abs(second_variation(v)), 1.0 / std::sinh(3.0), 1e-10);
  EXPECT_NEAR(std::abs(second_variation(v)), 0.09982, 1e-5);
}

TEST(SecondVariation, ClosedFormMatchesIntrinsic) {
  for (ModelId id : {ModelId::H2, ModelId::H3}) {
    Model M(id);
    for (int i = 0; i < 50; ++i) {
      Rng g = rng_for(5, static_cast<std::uint64_t>(i));
      const auto v = build_variation(M, random_config(M, g, 3.0, 10.0));
      const auto a = intrinsic_partials(v, false), b = hyperbolic_closed_form(v);
      EXPECT_NEAR(*a.d2_rr, *b.d2_rr, 1e-9);
      EXPECT_NEAR(*a.d2_ss, *b.d2_ss, 1e-9);
      EXPECT_NEAR(*a.d2_rs, *b.d2_rs, 1e-9 * std::max(1e-3, std::abs(*b.d2_rs)));
    }
  }
}

TEST(FiniteDifference, AgreesWithIntrinsicH2H3) {
  for (ModelId id : {ModelId::H2, ModelId::H3}) {
    Model M(id);
    for (int i = 0; i < 20; ++i) {
      Rng g = rng_for(6, static_cast<std::uint64_t>(i));
      const auto v = build_variation(M, random_config(M, g, 3.0, 10.0));
      const auto a = intrinsic_partials(v), f = fd_partials(v, 3);
      EXPECT_NEAR(*a.d_r, *f.d_r, 1e-7);
      EXPECT_NEAR(*a.d_s, *f.d_s, 1e-7);
      EXPECT_LE(scale_rel(*a.d2_rs, *f.d2_rs, 1e-12), 1e-6);
      EXPECT_LE(scale_rel(*a.d2_ss, *f.d2_ss, 1e-12), 1e-6);
      EXPECT_LE(scale_rel(*a.d2_rr, *f.d2_rr, 1e-12), 1e-6);
      EXPECT_LE(scale_rel(*a.d3_rss, *f.d3_rss, 1e-12), 1e-4) << to_string(id) << " config " << i;
    }
  }
}

TEST(FiniteDifference, SPinchFirstAndSecond) {
  Model S(ModelId::SPinch);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    Rng g = rng_for(7, static_cast<std::uint64_t>(i));
    const auto v = build_variation(S, random_config(S, g, 3.0, 5.0));
    const auto a = intrinsic_partials(v, false), f = fd_partials(v, 2);
    EXPECT_NEAR(*a.d_r, *f.d_r, 1e-7);
    EXPECT_NEAR(*a.d_s, *f.d_s, 1e-7);
    worst = std::max(worst, scale_rel(*a.d2_rr, *f.d2_rr, 1e-3));
    EXPECT_GE(*a.d2_rr, -1e-10);
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(NormalCoordinates, H2SecondVariation) {
  Model H(ModelId::H2);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    Rng g = rng_for(8, static_cast<std::uint64_t>(i));
    const auto v = build_variation(H, random_config(H, g, 3.0, 10.0));
    const auto nc = normal_coord_partials(v);
    worst = std::max(worst, std::abs(*nc.d2_rs - second_variation(v)));
    EXPECT_NEAR(*nc.phi, v.rho0(), 1e-10);
    EXPECT_NEAR(*nc.d_r, phi_first_partials(v).first, 1e-10);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(NormalCoordinates, H3ThirdVariation) {
  Model H(ModelId::H3);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    Rng g = rng_for(9, static_cast<std::uint64_t>(i));
    const auto v = build_variation(H, random_config(H, g, 3.0, 10.0));
    const auto nc = normal_coord_partials(v);
    worst = std::max(worst, std::abs(*nc.d3_rss - third_variation(v)));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(NormalCoordinates, RejectsSPinch) {
  Model S(ModelId::SPinch);
  Rng g = rng_for(10, 0);
  const auto v = build_variation(S, random_config(S, g, 3.0, 4.0));
  EXPECT_THROW(normal_coord_partials(v), Error);
}

TEST(SAcceleration, FlatIsZero) {
  Model E(ModelId::E2);
  const auto v = build_variation(E, parallel_lines(E));
  EXPECT_LE(E.norm(s_acceleration(v)), 1e-9);
}

TEST(SAcceleration, MatchesCoordinateOracle) {
  // in normal coordinates about eta(r0), D_s^2 d_t Psi = x''(s0) / rho0
  for (ModelId id : {ModelId::H2, ModelId::H3}) {
    Model M(id);
    for (int i = 0; i < 10; ++i) {
      Rng g = rng_for(11, static_cast<std::uint64_t>(i));
      const auto c = random_config(M, g, 3.0, 8.0);
      const auto v = build_variation(M, c);
      const Vec A = M.to_coords(s_acceleration(v));
      const auto ce = mp::curve<Mp>(c.eta), cg = mp::curve<Mp>(c.gamma);
      const auto p = mp::point(ce, Mp(0));
      const auto B = mp::basis(id, p);
      const Mp h("1e-3");
      std::vector<Mp> xdd(B.size(), Mp(0));
      const double w[5] = {-1, 16, -30, 16, -1};  // times 1/12
      for (int k = -2; k <= 2; ++k) {
        const auto x = mp::log_coords(id, p, mp::point(cg, Mp(k) * h), B);
        for (size_t j = 0; j < B.size(); ++j) xdd[j] += Mp(w[k + 2]) / Mp(12) * x[j];
      }
      double err = 0, nrm = 0;
      for (size_t j = 0; j < B.size(); ++j) {
        const double o = static_cast<double>(xdd[j] / (h * h) / Mp(v.rho0()));
        err = std::max(err, std::abs(A(static_cast<int>(j)) - o));
        nrm = std::max(nrm, std::abs(o));
      }
      EXPECT_LE(err, 1e-6 * std::max(nrm, 1e-3)) << to_string(id) << " " << i;
    }
  }
}

TEST(SAcceleration, StepHalvingStable) {
  Model H(ModelId::H2);
  for (int i = 0; i < 10; ++i) {
    Rng g = rng_for(12, static_cast<std::uint64_t>(i));
    const auto v = build_variation(H, random_config(H, g, 3.0, 8.0));
    const TangentVec a = s_acceleration(v, 1e-3), b = s_acceleration(v, 5e-4);
    EXPECT_LE(H.norm({a.base, a.v - b.v}), 1e-6);
  }
}

// gamma almost tangent to sigma at rho0 near 10: the acceleration is ~1e-8 and its tangential
// part is rounding, but the normal part is stable across a tenfold step change.
TEST(SAcceleration, NearTangentGammaNormalPartStable) {
  Model H(ModelId::H2);
  for (int i = 0; i < 20; ++i) {
    Rng g = rng_for(14, static_cast<std::uint64_t>(i));
    const double rho = uniform(g, 9.5, 10.0);
    const TangentVec u = centred_pair(H, g, rho);
    const auto v = build_variation(H, angled_config(H, g, u, rho, uniform(g, 0.3, 2.8), 1e-4));
    const TangentVec n = v.perp0(v.eta_dot());
    const double a = H.inner(s_acceleration(v, 1e-3), n), b = H.inner(s_acceleration(v, 1e-2), n);
    EXPECT_LE(std::abs(a - b), 1e-3 * std::abs(a)) << i;
  }
}

TEST(SAcceleration, RoundingDominatedStepIsRejected) {
  Model H(ModelId::H2);
  for (int i = 0; i < 10; ++i) {
    Rng g = rng_for(9, static_cast<std::uint64_t>(i));
    const auto v = build_variation(H, random_config(H, g, 8.0, 9.0));
    try {
      s_acceleration(v, 1e-14);
      ADD_FAILURE() << "config " << i;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::fd_noise);
    }
  }
}

TEST(VariationInvariants, TangentialLinearity) {
  for (ModelId id : {ModelId::E2, ModelId::H2, ModelId::H3, ModelId::SPinch}) {
    Model M(id);
    for (int i = 0; i < 10; ++i) {
      Rng g = rng_for(13, static_cast<std::uint64_t>(i));
      const auto v = build_variation(M, random_config(M, g, 3.0, id == ModelId::SPinch ? 5.0 : 9.0));
      const double r = v.rho0();
      for (double t : {0.0, 0.3 * r, r}) {
        const TangentVec sd = v.frame()->tangent(t);
        EXPECT_NEAR(M.inner(v.V0().value, v.sigma_dot0()), -r * M.inner(v.V().at(t).deriv, sd), 1e-8);
        EXPECT_NEAR(M.inner(v.WL().value, v.sigma_dotL()), r * M.inner(v.W().at(t).deriv, sd), 1e-8);
      }
    }
  }
}

TEST(VariationInvariants, SwapSymmetry) {
  for (ModelId id : {ModelId::E2, ModelId::H2, ModelId::H3, ModelId::SPinch}) {
    Model M(id);
    for (int i = 0; i < 10; ++i) {
      Rng g = rng_for(14, static_cast<std::uint64_t>(i));
      const auto c = random_config(M, g, 3.0, id == ModelId::SPinch ? 5.0 : 9.0);
      const auto a = build_variation(M, c.eta, c.gamma, 0.0, 0.0);
      const auto b = build_variation(M, c.gamma, c.eta, 0.0, 0.0);
      EXPECT_NEAR(second_variation(a), second_variation(b), 1e-8);
      EXPECT_NEAR(second_variation_rr_ss(a).first, second_variation_rr_ss(b).second, 1e-8);
      EXPECT_NEAR(second_variation_rr_ss(a).second, second_variation_rr_ss(b).first, 1e-8);
    }
  }
}

TEST(VariationInvariants, ConvexityAndEndpointSandwich) {
  for (ModelId id : {ModelId::E2, ModelId::H2, ModelId::H3, ModelId::SPinch}) {
    Model M(id);
    for (int i = 0; i < 30; ++i) {
      Rng g = rng_for(15, static_cast<std::uint64_t>(i));
      const auto v = build_variation(M, random_config(M, g, 3.0, id == ModelId::SPinch ? 5.0 : 10.0));
      EXPECT_GE(second_variation_rr_ss(v).first, -1e-10);
      EXPECT_GE(second_variation_rr_ss(v).second, -1e-10);
      const double gp = M.norm(v.perpL(v.gamma_dot()));
      const double dw = M.norm(v.perp0(v.W0().deriv));
      EXPECT_GE(dw, gp / std::sinh(v.rho0()) * (1 - 1e-8) - 1e-12);
      EXPECT_LE(dw, gp / v.rho0() * (1 + 1e-8) + 1e-12);
    }
  }
}

TEST(Partials, RouteRecorded) {
  Model H(ModelId::H2);
  Rng g = rng_for(16, 0);
  const auto v = build_variation(H, random_config(H, g, 3.0, 5.0));
  EXPECT_EQ(intrinsic_partials(v).route, Route::intrinsic);
  EXPECT_EQ(normal_coord_partials(v).route, Route::normal_coords);
  EXPECT_EQ(fd_partials(v, 2).route, Route::finite_diff);
  EXPECT_EQ(hyperbolic_closed_form(v).route, Route::hyperbolic_closed_form);
  EXPECT_STREQ(to_string(Route::normal_coords), "normal_coords");
  EXPECT_THROW(fd_partials(v, 5), Error);
}
