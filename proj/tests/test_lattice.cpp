#include <geovar/lattice.hpp>
#include <geovar/stable_sum.hpp>
#include <geovar/sampling.hpp>

#include <boost/math/tools/roots.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

using namespace geovar;

namespace {

const double inf = std::numeric_limits<double>::infinity();

Vec v3(double a, double b, double c) { Vec v(3); v << a, b, c; return v; }

Geodesic x_axis(const Model& H) { return H.geodesic(H.tangent(H.origin(), v3(1, 0, 0)), -inf, inf); }

// Bypasses the certificate so that dedup can be exercised on a group that is not free.
SchottkyGroup uncertified(std::vector<MoebiusElement> gens) {
  SchottkyGroup g;
  g.generators = std::move(gens);
  g.certificate.valid = true;
  return g;
}

}  // namespace

TEST(Moebius, TraceOfTranslation) {
  const Mat2 m = axis_translation(2.0L);
  EXPECT_NEAR(static_cast<double>(m.trace()), 2 * std::cosh(1.0), 1e-15);
  EXPECT_NEAR(static_cast<double>(m.trace()), 3.08616, 1e-5);
  // invert 2 cosh(l/2) = trace by bracketing
  const double tr = static_cast<double>(m.trace());
  std::uintmax_t it = 100;
  const auto br = boost::math::tools::toms748_solve([tr](double l) { return 2 * std::cosh(l / 2) - tr; }, 0.1, 10.0,
                                                    [](double a, double b) { return std::abs(a - b) < 1e-15; }, it);
  EXPECT_NEAR(0.5 * (br.first + br.second), 2.0, 1e-12);
  EXPECT_NEAR(static_cast<double>(translation_length(m)), 2.0, 1e-15);
}

TEST(Moebius, DeterminantAndProjectiveEquality) {
  Mat2 bad;
  bad << 2, 0, 0, 1;
  EXPECT_THROW(moebius(bad, "a"), Error);
  const Mat2 m = y_translation(1.3L) * axis_translation(0.7L);
  EXPECT_NEAR(static_cast<double>(m.determinant()), 1.0, 1e-15);
  EXPECT_TRUE(same_element(m, -m));
  EXPECT_FALSE(same_element(m, axis_translation(0.7L)));
}

TEST(Moebius, InversePairsReduceToIdentity) {
  const auto g = schottky_group(2.0, 2.0, 3.0);
  for (const auto& x : g.generators) {
    const MoebiusElement p = x * inverse(x), q = inverse(x) * x;
    EXPECT_TRUE(p.word.empty());
    EXPECT_TRUE(q.word.empty());
    EXPECT_TRUE(same_element(p.m, Mat2::Identity(), 1e-15L));
    EXPECT_TRUE(same_element(q.m, Mat2::Identity(), 1e-15L));
  }
  EXPECT_EQ(reduce_word("abBAa"), "a");
  EXPECT_EQ(inverse_word("abB"), "bBA");
}

TEST(Moebius, DisplacementOnAxisIsTranslationLength) {
  const auto g = schottky_group(2.0, 1.5, 3.0);
  EXPECT_NEAR(static_cast<double>(displacement(g.generators[0].m, HPoint{})), 2.0, 1e-15);
  // b's axis crosses the y axis at distance 3
  const HPoint on_b = act(y_translation(3.0L), HPoint{});
  EXPECT_NEAR(static_cast<double>(displacement(g.generators[1].m, on_b)), 1.5, 1e-14);
  // off the axis the displacement is larger
  EXPECT_GT(static_cast<double>(displacement(g.generators[1].m, HPoint{})), 1.5);
}

TEST(Moebius, DisplacementMatchesHyperboloidDistance) {
  Model H(ModelId::H2);
  Rng rng = rng_for(50, 0);
  const auto g = schottky_group(2.0, 2.0, 3.0);
  const MoebiusElement w = g.generators[0] * g.generators[1] * inverse(g.generators[0]);
  for (int i = 0; i < 20; ++i) {
    const Point p = random_point(H, rng, 1.0);
    EXPECT_NEAR(static_cast<double>(displacement(w.m, to_hpoint(p))), H.distance(p, act(H, w, p)), 1e-10);
  }
}

TEST(Schottky, CertificateAcceptsSeparatedAxes) {
  const auto g = schottky_group(2.0, 2.0, 3.0);
  EXPECT_TRUE(g.certificate.valid);
  EXPECT_GT(g.certificate.min_gap, 0.0);
  ASSERT_EQ(g.certificate.disks.size(), 4u);
  // every isometric circle meets the unit circle orthogonally
  for (const auto& d : g.certificate.disks)
    EXPECT_NEAR(static_cast<double>(std::norm(d.center) - d.radius * d.radius), 1.0, 1e-12);
}

TEST(Schottky, RejectsOverlappingDiscs) {
  EXPECT_THROW(schottky_group(0.3, 0.3, 0.2), Error);
  EXPECT_THROW(schottky_group(-1.0, 2.0, 3.0), Error);
  EXPECT_NO_THROW(cyclic_group(0.5));
}

TEST(Enumeration, BelowMinimalDisplacementOnlyIdentity) {
  Model H(ModelId::H2);
  const auto g = schottky_group(2.0, 2.0, 3.0);
  const auto en = enumerate_ball(g, 1.9, H.origin());
  ASSERT_EQ(en.elements.size(), 1u);
  EXPECT_TRUE(en.elements[0].word.empty());
  EXPECT_EQ(en.elements[0].disp, 0.0L);
}

TEST(Enumeration, FreeGroupWordCounts) {
  Model H(ModelId::H2);
  const auto g = schottky_group(2.0, 2.0, 3.0);
  const auto en = enumerate_words(g, 8, H.origin());
  ASSERT_EQ(en.words_by_length.size(), 9u);
  EXPECT_EQ(en.words_by_length[0], 1);
  long expect = 4, total = 1;
  for (int L = 1; L <= 8; ++L) {
    EXPECT_EQ(en.words_by_length[static_cast<size_t>(L)], expect) << "L=" << L;
    total += expect;
    expect *= 3;
  }
  EXPECT_EQ(static_cast<long>(en.elements.size()), total);
  EXPECT_EQ(en.duplicates, 0);
  EXPECT_EQ(en.near_collisions, 0);
}

TEST(Enumeration, DedupCollapsesRelations) {
  // a and b = a^2 generate the cyclic group; words up to length 2 reach a^k for |k| <= 4
  Model H(ModelId::H2);
  const Mat2 a = axis_translation(1.0L);
  const auto en = enumerate_words(uncertified({moebius(a, "a"), moebius(a * a, "b")}), 2, H.origin());
  EXPECT_EQ(en.elements.size(), 9u);
  EXPECT_GT(en.duplicates, 0);
  for (const auto& e : en.elements) {
    const double k = static_cast<double>(e.disp);
    EXPECT_NEAR(k, std::round(k), 1e-12);
  }
}

TEST(Enumeration, MonotoneCountAndGrowthSlope) {
  Model H(ModelId::H2);
  const auto g = schottky_group(1.5, 1.5, 2.5);
  const auto en = enumerate_ball(g, 14.0, H.origin());
  long prev = 0;
  for (double t = 0; t <= 14.0; t += 0.25) {
    const long n = count_within(en, t);
    EXPECT_GE(n, prev);
    prev = n;
  }
  EXPECT_EQ(prev, static_cast<long>(en.elements.size()));
  const auto f = growth_fit(en, {8, 9, 10, 11, 12, 13, 14});
  EXPECT_GT(f.slope, 0.0);
  EXPECT_LE(f.slope, 1.0);
}

TEST(Enumeration, PruningKeepsEveryElementInTheBall) {
  // the pruned search against the exhaustive word list, restricted to the ball
  Model H(ModelId::H2);
  const auto g = schottky_group(1.5, 1.5, 2.5);
  const double tau = 6.0;
  const auto pruned = enumerate_ball(g, tau, H.origin());
  const auto words = enumerate_words(g, 7, H.origin());
  // the exhaustive list covers the ball: lengths 5..7 already lie outside it
  std::set<std::string> in_ball;
  for (const auto& e : words.elements) {
    if (e.length >= 5) {
      EXPECT_GT(static_cast<double>(e.disp), tau) << e.word;
    }
    if (e.disp <= tau) in_ball.insert(e.word);
  }
  std::set<std::string> got;
  for (const auto& e : pruned.elements) got.insert(e.word);
  EXPECT_EQ(got, in_ball);
  EXPECT_EQ(got.size(), pruned.elements.size());
}

TEST(Enumeration, CanonicalOrderAndSoundDedup) {
  Model H(ModelId::H2);
  const auto g = schottky_group(1.5, 1.5, 2.5);
  const auto a = enumerate_ball(g, 9.0, H.origin()), b = enumerate_ball(g, 9.0, H.origin());
  ASSERT_EQ(a.elements.size(), b.elements.size());
  for (size_t i = 0; i < a.elements.size(); ++i) EXPECT_EQ(a.elements[i].word, b.elements[i].word);
  for (size_t i = 1; i < a.elements.size(); ++i) EXPECT_LE(a.elements[i - 1].disp, a.elements[i].disp);
  for (size_t i = 0; i < a.elements.size(); ++i)
    for (size_t j = i + 1; j < a.elements.size(); ++j) {
      const auto& x = a.elements[i].m;
      const auto& y = a.elements[j].m;
      ASSERT_GT(static_cast<double>(projective_gap(x, y)), 1e-6) << a.elements[i].word << " " << a.elements[j].word;
    }
}

TEST(Enumeration, DiscretenessFloor) {
  Model H(ModelId::H2);
  const auto g = schottky_group(2.0, 2.0, 3.0);
  const auto en = enumerate_ball(g, 12.0, H.origin());
  EXPECT_NEAR(en.min_displacement, 2.0, 1e-12);
  for (const auto& e : en.elements) {
    if (!e.word.empty()) {
      EXPECT_GE(static_cast<double>(e.disp), en.min_displacement);
    }
  }
}

TEST(Enumeration, IsometricAction) {
  Model H(ModelId::H2);
  const auto g = schottky_group(1.5, 1.5, 2.5);
  const auto en = enumerate_ball(g, 6.0, H.origin());
  Rng rng = rng_for(51, 0);
  for (size_t i = 0; i < en.elements.size(); i += 7) {
    const Point x = random_point(H, rng, 1.5), y = random_point(H, rng, 1.5);
    const double d = H.distance(x, y);
    EXPECT_NEAR(H.distance(act(H, en.elements[i], x), act(H, en.elements[i], y)), d, 1e-9);
  }
}

TEST(Enumeration, RejectsBadInput) {
  Model H(ModelId::H2);
  const auto g = schottky_group(2.0, 2.0, 3.0);
  EXPECT_THROW(enumerate_ball(g, 25.0, H.origin()), Error);
  EXPECT_THROW(enumerate_ball(g, -1.0, H.origin()), Error);
  SchottkyGroup bad = g;
  bad.certificate.valid = false;
  EXPECT_THROW(enumerate_ball(bad, 5.0, H.origin()), Error);
}

TEST(Enumeration, MemoryBudgetReportsPartialCount) {
  Model H(ModelId::H2);
  EnumerationOptions o;
  o.memory_budget = 100.0 * (sizeof(MoebiusElement) + 96.0);
  try {
    enumerate_ball(schottky_group(1.5, 1.5, 2.5), 15.0, H.origin(), o);
    FAIL() << "expected a memory_budget error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::memory_budget);
    // the budget holds exactly 100 elements
    EXPECT_EQ(e.residual(), 100.0);
  }
}

TEST(Tube, TranslationsAlongTheCoreAreInside) {
  Model H(ModelId::H2);
  const auto g = schottky_group(2.0, 2.0, 3.0);
  const auto en = enumerate_ball(g, 12.0, H.origin());
  const auto part = tube_partition(en, x_axis(H), 1e-6);
  EXPECT_EQ(part.in_tube.size() + part.transverse.size(), en.elements.size());
  long powers = 0;
  for (size_t i = 0; i < en.elements.size(); ++i) {
    const std::string& w = en.elements[i].word;
    const bool power = w.find_first_not_of(w.empty() ? ' ' : w[0]) == std::string::npos && (w.empty() || w[0] == 'a' || w[0] == 'A');
    if (power) {
      ++powers;
      EXPECT_LE(part.core_distance[i], 1e-12) << w;
    }
  }
  // a^m for |m| <= 6
  EXPECT_EQ(powers, 13);
  EXPECT_EQ(static_cast<long>(part.in_tube.size()), powers);
}

TEST(Tube, PerpendicularDisplacementIsTransverse) {
  Model H(ModelId::H2);
  // c translates by 2 along the y axis: c p is at distance 2 from the x axis
  const Mat2 c = y_translation(2.0L);
  const auto en = enumerate_ball(certified({moebius(c, "a")}), 5.0, H.origin());
  const auto part = tube_partition(en, x_axis(H), 1.0);
  ASSERT_EQ(en.elements.size(), 5u);
  EXPECT_EQ(part.in_tube.size(), 1u);  // the identity
  EXPECT_EQ(part.transverse.size(), 4u);
  for (size_t i : part.transverse) EXPECT_GE(part.core_distance[i], 2.0 - 1e-12);
}

TEST(Dyadic, CyclicAlongCoreIsExact) {
  Model H(ModelId::H2);
  EnumerationOptions o;
  o.tau_max = 4096;
  const auto en = enumerate_ball(cyclic_group(2.0), std::ldexp(1.0, 11), H.origin(), o);
  ASSERT_EQ(en.elements.size(), 2u * 1024 + 1);
  const auto part = tube_partition(en, x_axis(H), 0.5);
  EXPECT_EQ(part.in_tube.size(), en.elements.size());
  const auto d = dyadic_tube_count(en, part, 2, 10);
  for (int k = 1; k <= 10; ++k) {
    // displacement 2|m| in [2^k, 2^(k+1)) for 2^(k-1) <= |m| < 2^k, both signs
    EXPECT_EQ(d.counts[static_cast<size_t>(k)], 1L << k) << k;
    long positive = 0;
    for (size_t i : part.in_tube)
      if (dyadic_index(static_cast<double>(en.elements[i].disp)) == k && en.elements[i].word[0] == 'a') ++positive;
    EXPECT_EQ(positive, 1L << (k - 1)) << k;
  }
  EXPECT_EQ(d.counts[0], 0);
  EXPECT_DOUBLE_EQ(d.C, 1.0);
}

TEST(Dyadic, EmptyTube) {
  Model H(ModelId::H2);
  const auto en = enumerate_ball(schottky_group(2.0, 2.0, 3.0), 8.0, H.origin());
  // perpendicular to the y axis at distance 5 on the side away from b's axis
  const Point far = H.exp_map(H.tangent(H.origin(), v3(0, -1, 0)), 5.0);
  const Geodesic core = H.geodesic(H.project(far, v3(1, 0, 0)), -inf, inf);
  auto part = tube_partition(en, core, 0.1);
  const auto d = dyadic_tube_count(en, part, 0, 4);
  for (long c : d.counts) EXPECT_EQ(c, 0);
  EXPECT_EQ(d.C, 0.0);
}

TEST(Dyadic, SchottkyTubeDominatedByCyclicPart) {
  Model H(ModelId::H2);
  const auto en = enumerate_ball(schottky_group(2.0, 2.0, 4.0), 16.0, H.origin());
  const auto part = tube_partition(en, x_axis(H), 1.0);
  const auto d = dyadic_tube_count(en, part, 1, 3);
  EXPECT_LE(d.C, 2.0);
  for (int k = 1; k <= 3; ++k) EXPECT_GE(d.counts[static_cast<size_t>(k)], 1L << k);
}

TEST(TranslateGeodesic, IdentityAndAxisShift) {
  Model H(ModelId::H2);
  const Geodesic g = x_axis(H);
  const Geodesic same = translate_geodesic(H, MoebiusElement{}, g);
  for (double r : {-1.0, 0.0, 0.5, 2.0}) EXPECT_LE(H.distance(same.at(r), g.at(r)), 1e-12);
  const MoebiusElement a = moebius(axis_translation(1.7L), "a");
  const Geodesic moved = translate_geodesic(H, a, g);
  EXPECT_NEAR(moved.speed(), 1.0, 1e-12);
  for (double r : {-1.0, 0.0, 0.5, 2.0}) EXPECT_LE(H.distance(moved.at(r), g.at(r + 1.7)), 1e-9);
}

TEST(TranslateGeodesic, IsometryOnRandomPairs) {
  Model H(ModelId::H2);
  const auto g = schottky_group(2.0, 2.0, 3.0);
  const MoebiusElement a2 = g.generators[0] * g.generators[0];
  Rng rng = rng_for(52, 0);
  for (int i = 0; i < 100; ++i) {
    const Point x = random_point(H, rng, 2.0), y = random_point(H, rng, 2.0);
    EXPECT_NEAR(H.distance(act(H, a2, x), act(H, a2, y)), H.distance(x, y), 1e-10);
  }
  // b a moves points about 10 out, where Minkowski pairings carry ~eps cosh(10)^2 even in long double
  const MoebiusElement w = g.generators[1] * g.generators[0];
  const double c = std::cosh(static_cast<double>(displacement(w.m, HPoint{})) + 2.0);
  const double tol = 4 * std::numeric_limits<Real>::epsilon() * c * c;
  for (int i = 0; i < 100; ++i) {
    const HPoint x = to_hpoint(random_point(H, rng, 2.0)), y = to_hpoint(random_point(H, rng, 2.0));
    EXPECT_NEAR(static_cast<double>(distance(act(w.m, x), act(w.m, y))), static_cast<double>(distance(x, y)), tol);
  }
  const Geodesic core = H.geodesic(random_unit(H, random_point(H, rng, 1.0), rng), -5, 5);
  const Geodesic img = translate_geodesic(H, a2, core);
  EXPECT_NEAR(img.speed(), 1.0, 1e-12);
  for (double r : {-2.0, 0.3, 4.0}) EXPECT_LE(H.distance(img.at(r), act(H, a2, core.at(r))), 1e-9);
}

TEST(StableSum, BoundValues) {
  EXPECT_NEAR(stable_bound(100, 8), 10.0 / 8 * (1 + std::sqrt(2.0) + 2 + 2 * std::sqrt(2.0)), 1e-12);
  // n = 3: every annulus contributes 2^k 2^-k = 1
  EXPECT_NEAR(stable_bound(100, 12, 3), 100.0 / 12 * 4, 1e-12);
  EXPECT_THROW(stable_bound(100, 0.5), Error);
}

TEST(StableSum, CyclicClosedForm) {
  // phi for a^m along the core is |2m + r - s|
  Model H(ModelId::H2);
  StableSumOptions o;
  o.lambda = 80;
  o.R_prime = 0.5;
  o.grid = 9;
  const auto rep = stable_sum_scan(H, cyclic_group(2.0), x_axis(H), {8, 12, 16}, o);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& row : rep.rows) {
    double ref = 0;
    long used = 0;
    for (int m = -20; m <= 20; ++m) {
      const double phi = std::abs(2.0 * m + row.r - row.s);
      if (phi < 1 || phi > row.T) continue;
      ref += std::sqrt(o.lambda) / (row.T * std::sqrt(phi)) * std::abs(2 * std::cos(o.lambda * phi));
      ++used;
    }
    EXPECT_NEAR(row.sum, ref, 1e-9 * ref) << row.T;
    EXPECT_EQ(row.used, used);
    EXPECT_EQ(row.in_tube, row.elements);
    EXPECT_NEAR(row.ratio, row.sum / stable_bound(o.lambda, row.T), 1e-15);
  }
  EXPECT_TRUE(rep.monotone);
}

TEST(StableSum, SchottkyTubeShape) {
  Model H(ModelId::H2);
  StableSumOptions o;
  o.grid = 9;
  const auto rep = stable_sum_scan(H, schottky_group(2.0, 2.0, 4.0), x_axis(H), {16, 8, 12}, o);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[0].T, 8.0);
  EXPECT_TRUE(rep.monotone);
  EXPECT_GT(rep.kappa_prime, 0.0);
  for (const auto& row : rep.rows) {
    EXPECT_LT(row.in_tube, row.elements);
    EXPECT_LE(row.ratio, rep.kappa_prime);
    for (size_t k = 0; k < row.dyadic.size(); ++k) EXPECT_LE(row.dyadic[k], 2L << k);
  }
}

TEST(StableSum, RejectsBadInput) {
  Model H(ModelId::H2), E(ModelId::E2);
  EXPECT_THROW(stable_sum_scan(E, cyclic_group(2.0), x_axis(H), {8}), Error);
  EXPECT_THROW(stable_sum_scan(H, cyclic_group(2.0), x_axis(H), {}), Error);
  const Geodesic slow = H.geodesic(H.tangent(H.origin(), v3(2, 0, 0)), -inf, inf);
  EXPECT_THROW(stable_sum_scan(H, cyclic_group(2.0), slow, {8}), Error);
}
