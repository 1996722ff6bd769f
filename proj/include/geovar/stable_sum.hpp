#pragma once

#include "lattice.hpp"
#include "oscillatory.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace geovar {

// (lambda^((n-1)/2) / T) * sum over 2^k <= T of 2^k 2^(-k(n-1)/2)
inline double stable_bound(double lambda, double T, int dim = 2) {
  if (!(T >= 1)) throw Error(Errc::invalid_argument, "stable_bound needs T >= 1", T);
  const double e = 0.5 * (dim - 1);
  double s = 0;
  for (int k = 0; std::ldexp(1.0, k) <= T; ++k) s += std::ldexp(1.0, k) * std::pow(2.0, -k * e);
  return std::pow(lambda, e) / T * s;
}

struct StableSumOptions {
  double lambda = 100;
  double R_prime = 1.0;
  int grid = 17;  // (r, s) nodes per side on [0,1]^2
  EnumerationOptions enumeration;
};

struct StableSumRow {
  double T = 0;
  long elements = 0, in_tube = 0;
  long used = 0;             // in-tube elements with 1 <= phi <= T at the maximising (r, s)
  std::vector<long> dyadic;  // in-tube counts by displacement annulus, 2^k <= T
  double sum = 0;            // max over the grid of sum |K_alpha(r, s)|
  double r = 0, s = 0;       // where the max is attained
  double bound = 0, ratio = 0;
};

struct StableSumReport {
  double lambda = 0, R_prime = 0;
  std::vector<StableSumRow> rows;
  double kappa_prime = 0;  // max ratio
  bool monotone = false;   // T*sum and T*bound both nondecreasing in T
};

// Sum of model-kernel magnitudes |K_alpha(r, s)| over in-tube alpha with 1 <= phi_alpha <= T,
// phi_alpha(r, s) = d(alpha core(r), core(s)).  The core is unit speed with p = core(0).
inline StableSumReport stable_sum_scan(const Model& M, const SchottkyGroup& group, const Geodesic& core,
                                       std::vector<double> Ts, const StableSumOptions& o = {}) {
  if (M.id() != ModelId::H2) throw Error(Errc::unsupported, "stable_sum_scan is for h2");
  if (Ts.empty()) throw Error(Errc::invalid_argument, "stable_sum_scan needs T values");
  if (o.grid < 2) throw Error(Errc::invalid_argument, "grid needs two or more nodes");
  if (std::abs(core.speed() - 1.0) > 1e-10 || !core.contains(0.0) || !core.contains(1.0))
    throw Error(Errc::invalid_argument, "core must be unit speed and defined on [0,1]");
  std::sort(Ts.begin(), Ts.end());
  StableSumReport rep;
  rep.lambda = o.lambda;
  rep.R_prime = o.R_prime;

  std::vector<HPoint> nodes;
  for (int i = 0; i < o.grid; ++i) nodes.push_back(to_hpoint(core.at(static_cast<double>(i) / (o.grid - 1))));

  for (double T : Ts) {
    StableSumRow row;
    row.T = T;
    // phi <= T forces d(p, alpha p) <= T + r + s <= T + 2
    EnumerationOptions eo = o.enumeration;
    eo.tau_max = std::max(eo.tau_max, T + 2.0);
    const auto en = enumerate_ball(group, T + 2.0, core.at(0.0), eo);
    const auto part = tube_partition(en, core, o.R_prime);
    row.elements = static_cast<long>(en.elements.size());
    row.in_tube = static_cast<long>(part.in_tube.size());
    int kmax = 0;
    while (std::ldexp(1.0, kmax + 1) <= T) ++kmax;
    row.dyadic = dyadic_tube_count(en, part, 0, kmax).counts;

    ModelKernelSpec mk;
    mk.lambda = o.lambda;
    mk.T = T;
    mk.dim = 2;
    row.sum = -1;
    for (int a = 0; a < o.grid; ++a)
      for (int b = 0; b < o.grid; ++b) {
        double sum = 0;
        long used = 0;
        for (size_t i : part.in_tube) {
          const double phi = static_cast<double>(distance(act(en.elements[i].m, nodes[static_cast<size_t>(a)]), nodes[static_cast<size_t>(b)]));
          if (phi < 1.0 || phi > T) continue;
          sum += std::abs(model_kernel_value(phi, mk));
          ++used;
        }
        if (sum > row.sum) {
          row.sum = sum;
          row.used = used;
          row.r = static_cast<double>(a) / (o.grid - 1);
          row.s = static_cast<double>(b) / (o.grid - 1);
        }
      }
    row.bound = stable_bound(o.lambda, T);
    row.ratio = row.sum / row.bound;
    rep.kappa_prime = std::max(rep.kappa_prime, row.ratio);
    rep.rows.push_back(std::move(row));
  }
  rep.monotone = true;
  for (size_t i = 1; i < rep.rows.size(); ++i) {
    const auto &x = rep.rows[i - 1], &y = rep.rows[i];
    rep.monotone = rep.monotone && y.T * y.sum >= x.T * x.sum && y.T * y.bound >= x.T * x.bound;
  }
  return rep;
}

}  // namespace geovar
