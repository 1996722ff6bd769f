#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace geovar {

// Fornberg's recursion: weights for the m-th derivative at x0 on arbitrary nodes.
template <class S>
std::vector<S> fornberg_weights(int m, const std::vector<S>& x, S x0 = S(0)) {
  const int n = static_cast<int>(x.size());
  if (m < 0 || m >= n) throw std::invalid_argument("fornberg_weights: need more nodes than derivative order");
  std::vector<std::vector<S>> c(static_cast<size_t>(n), std::vector<S>(static_cast<size_t>(m + 1), S(0)));
  S c1 = 1, c4 = x[0] - x0;
  c[0][0] = 1;
  for (int i = 1; i < n; ++i) {
    const int mn = std::min(i, m);
    S c2 = 1;
    const S c5 = c4;
    c4 = x[static_cast<size_t>(i)] - x0;
    for (int j = 0; j < i; ++j) {
      const S c3 = x[static_cast<size_t>(i)] - x[static_cast<size_t>(j)];
      c2 *= c3;
      auto& ci = c[static_cast<size_t>(i)];
      auto& cj = c[static_cast<size_t>(j)];
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k)
          ci[static_cast<size_t>(k)] = c1 * (S(k) * c[static_cast<size_t>(i - 1)][static_cast<size_t>(k - 1)] -
                                             c5 * c[static_cast<size_t>(i - 1)][static_cast<size_t>(k)]) / c2;
        ci[0] = -c1 * c5 * c[static_cast<size_t>(i - 1)][0] / c2;
      }
      for (int k = mn; k >= 1; --k)
        cj[static_cast<size_t>(k)] = (c4 * cj[static_cast<size_t>(k)] - S(k) * cj[static_cast<size_t>(k - 1)]) / c3;
      cj[0] = c4 * cj[0] / c3;
    }
    c1 = c2;
  }
  std::vector<S> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<size_t>(i)] = c[static_cast<size_t>(i)][static_cast<size_t>(m)];
  return w;
}

// Central stencil on integer offsets -p..p for the m-th derivative with the given even accuracy order.
template <class S>
struct Stencil {
  std::vector<int> offsets;
  std::vector<S> weights;  // per unit step
};

template <class S>
Stencil<S> central_stencil(int m, int accuracy) {
  Stencil<S> st;
  if (m == 0) {
    st.offsets = {0};
    st.weights = {S(1)};
    return st;
  }
  const int p = (m + 1) / 2 - 1 + accuracy / 2;
  std::vector<S> x;
  for (int k = -p; k <= p; ++k) {
    st.offsets.push_back(k);
    x.push_back(S(k));
  }
  st.weights = fornberg_weights<S>(m, x);
  return st;
}

// d^{i+j} f / dr^i ds^j at (r0, s0) from the tensor-product stencil with step h.
template <class S, class F>
S mixed_partial(F&& f, S r0, S s0, int i, int j, S h, int accuracy) {
  const auto a = central_stencil<S>(i, accuracy), b = central_stencil<S>(j, accuracy);
  S acc = 0;
  for (size_t u = 0; u < a.offsets.size(); ++u) {
    if (a.weights[u] == S(0)) continue;
    for (size_t v = 0; v < b.offsets.size(); ++v) {
      if (b.weights[v] == S(0)) continue;
      acc += a.weights[u] * b.weights[v] * f(r0 + S(a.offsets[u]) * h, s0 + S(b.offsets[v]) * h);
    }
  }
  S scale = 1;
  for (int k = 0; k < i + j; ++k) scale *= h;
  return acc / scale;
}

// Combine estimates at h and h/2 whose leading error is O(h^order).
template <class S>
S richardson(const S& coarse, const S& fine, int order) {
  const S f = S(std::ldexp(1.0, order));
  return (f * fine - coarse) / (f - S(1));
}

template <class S>
struct RichardsonResult {
  S value, coarse, fine;
};

template <class S, class F>
RichardsonResult<S> mixed_partial_richardson(F&& f, S r0, S s0, int i, int j, S h, int accuracy) {
  const S a = mixed_partial<S>(f, r0, s0, i, j, h, accuracy);
  const S b = mixed_partial<S>(f, r0, s0, i, j, h / 2, accuracy);
  return {richardson<S>(a, b, accuracy), a, b};
}

// m-th derivative of a one-variable function with values in any vector space T.
template <class T, class F>
T derivative(F&& f, double x0, int m, double h, int accuracy) {
  const auto st = central_stencil<double>(m, accuracy);
  T acc = st.weights[0] * f(x0 + st.offsets[0] * h);
  for (size_t u = 1; u < st.offsets.size(); ++u)
    if (st.weights[u] != 0.0) acc = acc + st.weights[u] * f(x0 + st.offsets[u] * h);
  return acc / std::pow(h, m);
}

}  // namespace geovar
