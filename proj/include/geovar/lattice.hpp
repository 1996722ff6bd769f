#pragma once

#include "fit.hpp"
#include "models.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace geovar {

// Entries of long words reach e^{d/2}; long double keeps the cyclic counts exact to d ~ 2^11.
using Real = long double;
using Mat2 = Eigen::Matrix<Real, 2, 2>;

// Hyperboloid point of H2 in extended precision, time last.
struct HPoint {
  Real x = 0, y = 0, t = 1;
};

inline Real mink(const HPoint& p, const HPoint& q) { return p.x * q.x + p.y * q.y - p.t * q.t; }

// 2 asinh(|p - q|_M / 2)
inline Real distance(const HPoint& p, const HPoint& q) {
  const HPoint d{p.x - q.x, p.y - q.y, p.t - q.t};
  return 2.0L * std::asinh(0.5L * std::sqrt(std::max<Real>(0.0L, mink(d, d))));
}

inline HPoint to_hpoint(const Point& p) {
  require_model(ModelId::H2, p.model);
  return HPoint{p.x(0), p.x(1), p.x(2)};
}

// SL(2,R) acts on H2 through X -> m X m^T on the symmetric matrices X = [[t+x, y], [y, t-x]]
// of determinant 1.  The origin is X = I.
inline HPoint act(const Mat2& m, const HPoint& p) {
  Mat2 X;
  X << p.t + p.x, p.y, p.y, p.t - p.x;
  const Mat2 Y = m * X * m.transpose();
  return HPoint{0.5L * (Y(0, 0) - Y(1, 1)), 0.5L * (Y(0, 1) + Y(1, 0)), 0.5L * (Y(0, 0) + Y(1, 1))};
}

// The same action as a 3x3 Lorentz matrix on (x, y, t).
inline Eigen::Matrix3d lorentz(const Mat2& m) {
  Eigen::Matrix3d L;
  const Real e[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int j = 0; j < 3; ++j) {
    Mat2 X;
    X << e[j][2] + e[j][0], e[j][1], e[j][1], e[j][2] - e[j][0];
    const Mat2 Y = m * X * m.transpose();
    L(0, j) = static_cast<double>(0.5L * (Y(0, 0) - Y(1, 1)));
    L(1, j) = static_cast<double>(0.5L * (Y(0, 1) + Y(1, 0)));
    L(2, j) = static_cast<double>(0.5L * (Y(0, 0) + Y(1, 1)));
  }
  return L;
}

// d(o, m o) from sinh(d/2) = |(a-d, b+c)| / 2, which needs det m = 1 and has no cancellation
// near the identity.
inline Real origin_displacement(const Mat2& m) {
  const Real u = m(0, 0) - m(1, 1), v = m(0, 1) + m(1, 0);
  return 2.0L * std::asinh(0.5L * std::sqrt(u * u + v * v));
}

// Boost h with h o = p (h h^T = X_p by Cholesky, so det h = 1).
inline Mat2 boost_to(const HPoint& p) {
  const Real a = p.t + p.x, b = p.y, c = p.t - p.x;
  const Real l00 = std::sqrt(a), l10 = b / l00, l11 = std::sqrt(c - l10 * l10);
  Mat2 h;
  h << l00, 0, l10, l11;
  return h;
}

inline Mat2 inverse(const Mat2& m) {
  Mat2 r;
  r << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
  return r;
}

inline Real displacement(const Mat2& m, const HPoint& p) {
  if (p.x == 0 && p.y == 0) return origin_displacement(m);
  const Mat2 h = boost_to(p);
  return origin_displacement(inverse(h) * m * h);
}

// Generator words over a, b, c, ... with upper case for inverses.
inline char inverse_letter(char l) { return std::islower(static_cast<unsigned char>(l)) ? static_cast<char>(std::toupper(l)) : static_cast<char>(std::tolower(l)); }

inline std::string reduce_word(const std::string& w) {
  std::string r;
  for (char l : w) {
    if (!r.empty() && r.back() == inverse_letter(l)) r.pop_back();
    else r.push_back(l);
  }
  return r;
}

inline std::string inverse_word(const std::string& w) {
  std::string r(w.rbegin(), w.rend());
  for (char& l : r) l = inverse_letter(l);
  return r;
}

struct MoebiusElement {
  Mat2 m = Mat2::Identity();
  std::string word;  // reduced; empty for the identity
  Real disp = 0;     // d(p, m p) at the enumeration base point
  int length = 0;    // BFS level at which the element first appeared

  Real trace() const { return m.trace(); }
  Real det() const { return m.determinant(); }
};

inline MoebiusElement moebius(const Mat2& m, std::string word) {
  const Real det = m.determinant();
  if (std::abs(det - 1.0L) > 1e-12L * std::max<Real>(1.0L, m.cwiseAbs().maxCoeff() * m.cwiseAbs().maxCoeff()))
    throw Error(Errc::invalid_argument, "Moebius element needs det 1", static_cast<double>(det));
  MoebiusElement e;
  e.m = m;
  e.word = reduce_word(word);
  e.length = static_cast<int>(e.word.size());
  return e;
}

inline MoebiusElement operator*(const MoebiusElement& x, const MoebiusElement& y) {
  MoebiusElement r;
  r.m = x.m * y.m;
  r.word = reduce_word(x.word + y.word);
  r.length = static_cast<int>(r.word.size());
  return r;
}

inline MoebiusElement inverse(const MoebiusElement& x) {
  MoebiusElement r;
  r.m = inverse(x.m);
  r.word = inverse_word(x.word);
  r.length = x.length;
  return r;
}

inline Real matrix_scale(const Mat2& m) { return std::max<Real>(1.0L, m.cwiseAbs().maxCoeff()); }

// Distance in PSL(2,R): min over the sign, max-entry norm.
inline Real projective_gap(const Mat2& x, const Mat2& y) {
  return std::min((x - y).cwiseAbs().maxCoeff(), (x + y).cwiseAbs().maxCoeff());
}

inline bool same_element(const Mat2& x, const Mat2& y, Real tol = 1e-9L) {
  return projective_gap(x, y) <= tol * std::max(matrix_scale(x), matrix_scale(y));
}

// Translation length from |tr| = 2 cosh(l/2); 0 for elliptic and parabolic elements.
inline Real translation_length(const Mat2& m) {
  const Real t = std::abs(m.trace());
  return t > 2.0L ? 2.0L * std::acosh(0.5L * t) : 0.0L;
}

inline Mat2 axis_translation(Real ell) {
  Mat2 m;
  m << std::exp(0.5L * ell), 0, 0, std::exp(-0.5L * ell);
  return m;
}

// Translation by s along the y axis through the origin.
inline Mat2 y_translation(Real s) {
  Mat2 m;
  m << std::cosh(0.5L * s), std::sinh(0.5L * s), std::sinh(0.5L * s), std::cosh(0.5L * s);
  return m;
}

// Isometric circle in the disc model: |conj(beta) z + conj(alpha)| = 1 for the SU(1,1) form
// alpha = (a + d + i(b - c))/2, beta = (a - d - i(b + c))/2.  m maps its exterior onto the
// interior of the circle of m^-1.
struct Disk {
  std::complex<Real> center;
  Real radius = 0;
};

inline Disk isometric_circle(const Mat2& m) {
  const std::complex<Real> al(0.5L * (m(0, 0) + m(1, 1)), 0.5L * (m(0, 1) - m(1, 0)));
  const std::complex<Real> be(0.5L * (m(0, 0) - m(1, 1)), -0.5L * (m(0, 1) + m(1, 0)));
  if (std::abs(be) == 0) throw Error(Errc::degenerate, "element fixes the origin; no isometric circle");
  return Disk{-std::conj(al) / std::conj(be), 1.0L / std::abs(be)};
}

// Ping-pong certificate: the closed isometric discs of all generators and their inverses are
// pairwise disjoint.  This makes the group free on the generators and discrete.
struct Certificate {
  std::vector<Disk> disks;  // g_0, g_0^-1, g_1, g_1^-1, ...
  double min_gap = 0;       // min over pairs of |c_i - c_j| - r_i - r_j
  bool valid = false;
};

inline Certificate ping_pong_certificate(const std::vector<MoebiusElement>& gens) {
  Certificate c;
  for (const auto& g : gens) {
    c.disks.push_back(isometric_circle(g.m));
    c.disks.push_back(isometric_circle(inverse(g.m)));
  }
  Real gap = std::numeric_limits<Real>::infinity();
  for (size_t i = 0; i < c.disks.size(); ++i)
    for (size_t j = i + 1; j < c.disks.size(); ++j)
      gap = std::min(gap, std::abs(c.disks[i].center - c.disks[j].center) - c.disks[i].radius - c.disks[j].radius);
  c.min_gap = static_cast<double>(gap);
  c.valid = gap > 0;
  return c;
}

struct SchottkyGroup {
  std::vector<MoebiusElement> generators;
  Certificate certificate;
};

inline SchottkyGroup certified(std::vector<MoebiusElement> gens) {
  SchottkyGroup g;
  g.generators = std::move(gens);
  g.certificate = ping_pong_certificate(g.generators);
  if (!g.certificate.valid)
    throw Error(Errc::invalid_argument, "ping-pong discs overlap", g.certificate.min_gap);
  return g;
}

// a translates by l1 along the x axis through the origin; b translates by l2 along the geodesic
// crossing the y axis perpendicularly at distance `separation` from the origin.  The two axes
// are at distance `separation`.
inline SchottkyGroup schottky_group(double l1, double l2, double separation) {
  if (!(l1 > 0) || !(l2 > 0) || !(separation > 0)) throw Error(Errc::invalid_argument, "schottky_group needs positive lengths");
  const Mat2 h = y_translation(separation);
  return certified({moebius(axis_translation(l1), "a"), moebius(h * axis_translation(l2) * inverse(h), "b")});
}

// Infinite cyclic group generated by a translation of length ell along the x axis.
inline SchottkyGroup cyclic_group(double ell) {
  if (!(ell > 0)) throw Error(Errc::invalid_argument, "cyclic_group needs a positive length");
  return certified({moebius(axis_translation(ell), "a")});
}

struct EnumerationOptions {
  double tau_max = 20;
  bool prune = true;     // abandon words with d(p, w p) - max_g d(p, g p) > tau
  int max_length = 0;    // stop after this word length; 0 = until the frontier empties
  double memory_budget = 1024.0 * 1024 * 1024;
  double dedup_tol = 1e-9;
  double near_tol = 1e-6;  // closer than this but farther than dedup_tol: decided by the word
};

struct GroupEnumeration {
  std::vector<MoebiusElement> generators;
  std::vector<MoebiusElement> elements;  // displacement <= tau, sorted by (displacement, word)
  HPoint base;
  double tau = 0;
  int max_length = 0;                 // longest word reached
  std::vector<long> words_by_length;  // distinct elements first reached at each length, any displacement
  long duplicates = 0;                // reduced words whose matrix was already present
  long near_collisions = 0;
  double min_displacement = 0;        // over non-identity elements; discreteness floor
};

namespace detail {

// Index of stored matrices by a linear key; m and -m map to +-key.
class MatrixIndex {
 public:
  explicit MatrixIndex(Real tol) : tol_(tol) {}

  static Real key(const Mat2& m) {
    return m(0, 0) + 0.7548776662466927L * m(0, 1) + 0.5698402909980532L * m(1, 0) + 0.4301597090019468L * m(1, 1);
  }

  // Stored indices within tol (relative to the entry scale) of m up to sign.
  template <class F>
  void near(const Mat2& m, F&& f) const {
    const Real k = key(m), w = tol_ * matrix_scale(m) * 2.76L;
    for (Real c : {k, -k})
      for (auto it = map_.lower_bound(c - w); it != map_.end() && it->first <= c + w; ++it) f(it->second);
  }

  void insert(const Mat2& m, size_t idx) { map_.emplace(key(m), idx); }

 private:
  Real tol_;
  std::multimap<Real, size_t> map_;
};

}  // namespace detail

// Breadth-first search of the Cayley graph over reduced words, deduplicating by matrix.
inline GroupEnumeration enumerate_ball(const SchottkyGroup& group, double tau, const Point& p,
                                       const EnumerationOptions& o = {}) {
  if (!group.certificate.valid) throw Error(Errc::invalid_argument, "enumeration needs a ping-pong certificate");
  if (!(tau >= 0)) throw Error(Errc::invalid_argument, "tau must be nonnegative");
  if (tau > o.tau_max) throw Error(Errc::invalid_argument, "tau exceeds tau_max", tau);
  GroupEnumeration en;
  en.generators = group.generators;
  en.base = to_hpoint(p);
  en.tau = tau;

  std::vector<MoebiusElement> letters;
  for (const auto& g : group.generators) {
    letters.push_back(g);
    letters.push_back(inverse(g));
  }
  Real dmax = 0;
  for (auto& l : letters) dmax = std::max(dmax, displacement(l.m, en.base));

  std::vector<MoebiusElement> all;
  detail::MatrixIndex index(static_cast<Real>(o.near_tol));
  MoebiusElement id;
  all.push_back(id);
  index.insert(id.m, 0);
  en.words_by_length.push_back(1);
  const double per = sizeof(MoebiusElement) + 96.0;
  std::vector<size_t> frontier{0};
  for (int len = 1; !frontier.empty() && (o.max_length <= 0 || len <= o.max_length); ++len) {
    std::vector<size_t> next;
    long found = 0;
    for (size_t fi : frontier) {
      if (o.prune && all[fi].disp - dmax > static_cast<Real>(tau)) continue;
      for (const auto& l : letters) {
        const std::string& w = all[fi].word;
        if (!w.empty() && w.back() == inverse_letter(l.word[0])) continue;
        MoebiusElement e;
        e.m = all[fi].m * l.m;
        e.word = w + l.word;
        e.length = len;
        bool dup = false;
        index.near(e.m, [&](size_t j) {
          if (dup) return;
          const Real gap = projective_gap(e.m, all[j].m), sc = std::max(matrix_scale(e.m), matrix_scale(all[j].m));
          if (gap <= static_cast<Real>(o.dedup_tol) * sc) dup = true;
          else if (gap <= static_cast<Real>(o.near_tol) * sc) {
            if (reduce_word(e.word) == reduce_word(all[j].word)) dup = true;
            else ++en.near_collisions;
          }
        });
        if (dup) {
          ++en.duplicates;
          continue;
        }
        if (static_cast<double>(all.size() + 1) * per > o.memory_budget)
          throw Error(Errc::memory_budget,
                      "enumeration exceeded the memory budget after " + std::to_string(all.size()) + " elements",
                      static_cast<double>(all.size()));
        e.disp = displacement(e.m, en.base);
        index.insert(e.m, all.size());
        next.push_back(all.size());
        all.push_back(std::move(e));
        ++found;
      }
    }
    if (found > 0) {
      en.max_length = len;
      en.words_by_length.push_back(found);
    }
    frontier = std::move(next);
  }

  en.min_displacement = std::numeric_limits<double>::infinity();
  for (auto& e : all) {
    if (!e.word.empty()) en.min_displacement = std::min(en.min_displacement, static_cast<double>(e.disp));
    if (e.disp <= static_cast<Real>(tau)) en.elements.push_back(std::move(e));
  }
  std::sort(en.elements.begin(), en.elements.end(), [](const MoebiusElement& a, const MoebiusElement& b) {
    if (a.disp != b.disp) return a.disp < b.disp;
    if (a.word.size() != b.word.size()) return a.word.size() < b.word.size();
    return a.word < b.word;
  });
  return en;
}

// All reduced words up to length L with no displacement pruning.
inline GroupEnumeration enumerate_words(const SchottkyGroup& group, int L, const Point& p, EnumerationOptions o = {}) {
  if (L < 0) throw Error(Errc::invalid_argument, "word length must be nonnegative");
  o.prune = false;
  o.max_length = L;
  o.tau_max = std::numeric_limits<double>::infinity();
  return enumerate_ball(group, std::numeric_limits<double>::infinity(), p, o);
}

inline long count_within(const GroupEnumeration& en, double tau) {
  return static_cast<long>(std::upper_bound(en.elements.begin(), en.elements.end(), static_cast<Real>(tau),
                                            [](Real t, const MoebiusElement& e) { return t < e.disp; }) -
                           en.elements.begin());
}

// log N(tau) against tau.
inline LinearFit growth_fit(const GroupEnumeration& en, const std::vector<double>& taus) {
  std::vector<double> x, y;
  for (double t : taus) {
    if (t > en.tau) throw Error(Errc::invalid_argument, "growth_fit radius beyond the enumeration", t);
    x.push_back(t);
    y.push_back(std::log(static_cast<double>(count_within(en, t))));
  }
  return fit_line(x, y);
}

// Unit spacelike normal of the plane through the origin that cuts out the core; sinh d(q, core)
// = |<q, n>|.
inline HPoint core_normal(const Geodesic& core) {
  require_model(ModelId::H2, core.model());
  const Vec a = core.start().x, b = core.velocity().v / core.speed();
  HPoint n{a(1) * b(2) - a(2) * b(1), a(2) * b(0) - a(0) * b(2), -(a(0) * b(1) - a(1) * b(0))};
  const Real s = std::sqrt(mink(n, n));
  n.x /= s;
  n.y /= s;
  n.t /= s;
  return n;
}

inline Real distance_to_core(const HPoint& q, const HPoint& n) { return std::asinh(std::abs(mink(q, n))); }

struct TubePartition {
  double R_prime = 0;
  std::vector<size_t> in_tube, transverse;  // indices into the enumeration's elements
  std::vector<double> core_distance;        // d(alpha p, core) per element
};

inline TubePartition tube_partition(const GroupEnumeration& en, const Geodesic& core, double R_prime) {
  if (!(R_prime >= 0)) throw Error(Errc::invalid_argument, "R' must be nonnegative");
  const HPoint n = core_normal(core);
  TubePartition t;
  t.R_prime = R_prime;
  for (size_t i = 0; i < en.elements.size(); ++i) {
    const double d = static_cast<double>(distance_to_core(act(en.elements[i].m, en.base), n));
    t.core_distance.push_back(d);
    (d <= R_prime ? t.in_tube : t.transverse).push_back(i);
  }
  return t;
}

// Annulus index: d in [2^k, 2^(k+1)), with values within 1e-12 relative below a power of two
// snapped up to it.  Returns -1 for d < 1.
inline int dyadic_index(double d) {
  if (!(d >= 1.0 - 1e-12)) return -1;
  return static_cast<int>(std::floor(std::log2(d) + 1e-12));
}

struct DyadicCounts {
  std::vector<long> counts;  // counts[k] for k = 0..kmax
  int k_lo = 0, k_hi = 0;
  double C = 0;  // max over k in [k_lo, k_hi] of counts[k] / 2^k
};

inline DyadicCounts dyadic_tube_count(const GroupEnumeration& en, const TubePartition& part, int k_lo, int k_hi) {
  if (k_lo < 0 || k_hi < k_lo) throw Error(Errc::invalid_argument, "bad annulus range");
  DyadicCounts out;
  out.k_lo = k_lo;
  out.k_hi = k_hi;
  out.counts.assign(static_cast<size_t>(k_hi) + 1, 0);
  for (size_t i : part.in_tube) {
    const int k = dyadic_index(static_cast<double>(en.elements[i].disp));
    if (k >= 0 && k <= k_hi) ++out.counts[static_cast<size_t>(k)];
  }
  for (int k = k_lo; k <= k_hi; ++k)
    out.C = std::max(out.C, static_cast<double>(out.counts[static_cast<size_t>(k)]) / std::ldexp(1.0, k));
  return out;
}

// Pushforward of a geodesic by the isometry; unit speed is preserved.
inline Geodesic translate_geodesic(const Model& M, const MoebiusElement& alpha, const Geodesic& geo) {
  if (M.id() != ModelId::H2) throw Error(Errc::unsupported, "translate_geodesic is for h2");
  require_model(M.id(), geo.model());
  const Eigen::Matrix3d L = lorentz(alpha.m);
  const Point p = M.point(L * Eigen::Vector3d(geo.start().x));
  const TangentVec v = M.project(p, L * Eigen::Vector3d(geo.velocity().v));
  return M.geodesic(v, geo.t_min(), geo.t_max());
}

inline Point act(const Model& M, const MoebiusElement& alpha, const Point& p) {
  if (M.id() != ModelId::H2) throw Error(Errc::unsupported, "group action is for h2");
  return M.point(lorentz(alpha.m) * Eigen::Vector3d(p.x));
}

}  // namespace geovar
