#pragma once

namespace geovar {

// Classical fixed-step RK4; f(t, y) returns dy/dt.
template <class Y, class F>
Y rk4_step(const Y& y, double t, double h, F&& f) {
  const Y k1 = f(t, y);
  const Y k2 = f(t + 0.5 * h, Y(y + (0.5 * h) * k1));
  const Y k3 = f(t + 0.5 * h, Y(y + (0.5 * h) * k2));
  const Y k4 = f(t + h, Y(y + h * k3));
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace geovar
