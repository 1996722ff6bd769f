#pragma once

#include "core.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace geovar {

// Ordinary least squares y = intercept + slope * x.
struct LinearFit {
  double slope = 0, intercept = 0, max_residual = 0;
};

inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  if (n < 2 || y.size() != n) throw Error(Errc::invalid_argument, "fit_line needs two or more points");
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  for (size_t i = 0; i < n; ++i) f.max_residual = std::max(f.max_residual, std::abs(y[i] - f.intercept - f.slope * x[i]));
  return f;
}

}  // namespace geovar
