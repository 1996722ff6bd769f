#pragma once

#include "models.hpp"

#include <cstdint>
#include <random>

namespace geovar {

using Rng = std::mt19937_64;

// Per-item generator so results do not depend on how items are scheduled.
inline Rng rng_for(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return Rng(z);
}

inline double uniform(Rng& g, double a, double b) { return std::uniform_real_distribution<double>(a, b)(g); }
inline double gaussian(Rng& g) { return std::normal_distribution<double>(0.0, 1.0)(g); }
inline double log_uniform(Rng& g, double a, double b) { return std::exp(uniform(g, std::log(a), std::log(b))); }

inline Vec random_direction(Rng& g, int n) {
  Vec c(n);
  do {
    for (int i = 0; i < n; ++i) c(i) = gaussian(g);
  } while (c.norm() < 1e-12);
  return c / c.norm();
}

inline TangentVec random_unit(const Model& M, const Point& p, Rng& g) {
  return M.from_coords(p, random_direction(g, M.dim()));
}

// Unit vector at p making angle `angle` with the unit vector e (uniform over admissible directions).
inline TangentVec unit_at_angle(const Model& M, const TangentVec& e, double angle, Rng& g) {
  const TangentVec en{e.base, e.v / M.norm(e)};
  TangentVec w = random_unit(M, e.base, g);
  for (int tries = 0; tries < 64; ++tries) {
    w.v -= M.inner(w, en) * en.v;
    if (M.norm(w) > 1e-6) break;
    w = random_unit(M, e.base, g);
  }
  w.v /= M.norm(w);
  return TangentVec{e.base, std::cos(angle) * en.v + std::sin(angle) * w.v};
}

// Point at distance <= radius from the model origin.
inline Point random_point(const Model& M, Rng& g, double radius) {
  const Point o = M.origin();
  const double r = radius * std::sqrt(uniform(g, 0.0, 1.0));
  if (M.id() == ModelId::SPinch || M.id() == ModelId::E2) {
    Vec x = random_direction(g, 2) * r;
    return M.point(x);
  }
  return M.exp_map(random_unit(M, o, g), r);
}

}  // namespace geovar
