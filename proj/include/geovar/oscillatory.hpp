#pragma once

#include "finite_difference.hpp"
#include "fit.hpp"
#include "models.hpp"
#include "parallel.hpp"
#include "sampling.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace geovar {

using Cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;

struct PhaseSpec {
  std::string name;
  std::function<double(double, double)> phase;
  std::function<double(double, double)> amplitude = [](double, double) { return 1.0; };
  double C_lower = 1.0;  // |phi_rs| >= C or |phi_rss| >= C everywhere
  double A_upper = 1.0;  // >= max(||phi_rs||_{C^2}, 1)
  double amp_c1 = 1.0;   // ||a||_{C^1}
};

// phi = rs: phi_rs = 1.
inline PhaseSpec phase_rs() {
  PhaseSpec p;
  p.name = "rs";
  p.phase = [](double r, double s) { return r * s; };
  return p;
}

// phi = r s^2 / 2: phi_rs = s vanishes at s = 0, phi_rss = 1.
// ||phi_rs||_{C^2} = sup|s| + sup|d_s s| = 2.
inline PhaseSpec phase_rs2() {
  PhaseSpec p;
  p.name = "rs2";
  p.phase = [](double r, double s) { return 0.5 * r * s * s; };
  p.A_upper = 2.0;
  return p;
}

// phi(r, s) = d(eta(r), gamma(s)).
inline std::function<double(double, double)> geodesic_phase(const Model& M, const Geodesic& eta, const Geodesic& gamma) {
  return [M, eta, gamma](double r, double s) { return M.distance(eta.at(r), gamma.at(s)); };
}

enum class Storage { automatic, f64, f32 };

struct KernelOptions {
  double oversample = 8.0;  // grid points per oscillation period
  std::size_t memory_budget = std::size_t(3) << 29;  // 1.5 GiB
  Storage storage = Storage::automatic;
  int threads = 1;
};

inline int required_N(double lambda, double oversample) {
  return std::max(2, static_cast<int>(std::ceil(oversample * lambda / (2.0 * M_PI) - 1e-9)));
}

// Matrix of an operator on L^2(0,1) discretised with composite trapezoid weights w.  The
// stored matrix is sqrt(w_i) K(r_i, s_j) sqrt(w_j), so its spectral norm is the norm of the
// discrete operator between weighted l^2 spaces, which approximates the continuum L^2 norm.
class DiscretizedKernel {
 public:
  DiscretizedKernel() = default;

  int N() const { return n_; }
  double lambda() const { return lambda_; }
  bool single_precision() const { return single_; }
  const std::vector<double>& nodes() const { return x_; }
  const std::vector<double>& weights() const { return w_; }
  std::size_t bytes() const { return std::size_t(n_) * std::size_t(n_) * (single_ ? 8 : 16); }

  // K(r_i, s_j) without quadrature weights.
  Cplx value(int i, int j) const { return stored(i, j) / std::sqrt(w_[static_cast<size_t>(i)] * w_[static_cast<size_t>(j)]); }
  // Matrix entry of the operator as it acts on grid values: K(r_i, s_j) w_j.
  Cplx entry(int i, int j) const { return value(i, j) * w_[static_cast<size_t>(j)]; }

  Eigen::MatrixXcd dense() const {
    Eigen::MatrixXcd D(n_, n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) D(i, j) = stored(i, j);
    return D;
  }

  // y = M x
  CVec apply(const CVec& x) const {
    CVec y(n_);
    for (int i = 0; i < n_; ++i) y(i) = row_dot(i, x);
    return y;
  }

  // M^* (M x), one pass over the matrix.  Rows are split into a fixed number of blocks whose
  // partial sums are added in order, so the result does not depend on the thread count.
  CVec apply_normal(const CVec& x, int threads = 1) const {
    const int blocks = std::min(n_, 16);
    std::vector<Eigen::VectorXd> zr(static_cast<size_t>(blocks)), zi(static_cast<size_t>(blocks));
    const Eigen::VectorXd xr = x.real(), xi = x.imag();
    parallel_for(static_cast<size_t>(blocks), threads, [&](size_t b) {
      const int lo = static_cast<int>(b) * n_ / blocks, hi = (static_cast<int>(b) + 1) * n_ / blocks;
      Eigen::VectorXd ar = Eigen::VectorXd::Zero(n_), ai = Eigen::VectorXd::Zero(n_);
      Eigen::VectorXd re(n_), im(n_);
      for (int i = lo; i < hi; ++i) {
        load_row(i, re, im);
        const double yr = re.dot(xr) - im.dot(xi), yi = re.dot(xi) + im.dot(xr);
        ar += yr * re + yi * im;
        ai += yi * re - yr * im;
      }
      zr[b] = std::move(ar);
      zi[b] = std::move(ai);
    });
    CVec z = CVec::Zero(n_);
    for (int b = 0; b < blocks; ++b) {
      z.real() += zr[static_cast<size_t>(b)];
      z.imag() += zi[static_cast<size_t>(b)];
    }
    return z;
  }

  // Wraps an already weighted matrix (uniform weights are recorded for bookkeeping only).
  static DiscretizedKernel from_dense(const Eigen::MatrixXcd& M) {
    if (M.rows() != M.cols() || M.rows() < 1) throw Error(Errc::invalid_argument, "from_dense needs a square matrix");
    DiscretizedKernel K;
    K.n_ = static_cast<int>(M.rows());
    K.x_.resize(static_cast<size_t>(K.n_));
    K.w_.assign(static_cast<size_t>(K.n_), 1.0 / K.n_);
    for (int i = 0; i < K.n_; ++i) K.x_[static_cast<size_t>(i)] = (i + 0.5) / K.n_;
    K.re64_ = M.real();
    K.im64_ = M.imag();
    return K;
  }

  template <class Fn>
  static DiscretizedKernel assemble(int N, double lambda, Fn&& value, const KernelOptions& o) {
    if (N < 2) throw Error(Errc::invalid_argument, "kernel grid needs N >= 2");
    DiscretizedKernel K;
    K.n_ = N;
    K.lambda_ = lambda;
    const std::size_t need64 = std::size_t(N) * std::size_t(N) * 16, need32 = need64 / 2;
    switch (o.storage) {
      case Storage::f64: K.single_ = false; break;
      case Storage::f32: K.single_ = true; break;
      case Storage::automatic: K.single_ = need64 > o.memory_budget; break;
    }
    if ((K.single_ ? need32 : need64) > o.memory_budget)
      throw Error(Errc::memory_budget, "kernel does not fit the memory budget", static_cast<double>(K.single_ ? need32 : need64));
    K.x_.resize(static_cast<size_t>(N));
    K.w_.assign(static_cast<size_t>(N), 1.0 / (N - 1));
    for (int i = 0; i < N; ++i) K.x_[static_cast<size_t>(i)] = static_cast<double>(i) / (N - 1);
    K.w_.front() *= 0.5;
    K.w_.back() *= 0.5;
    if (K.single_) {
      K.re32_.resize(N, N);
      K.im32_.resize(N, N);
    } else {
      K.re64_.resize(N, N);
      K.im64_.resize(N, N);
    }
    parallel_for(static_cast<size_t>(N), o.threads, [&](size_t ii) {
      const int i = static_cast<int>(ii);
      const double wi = std::sqrt(K.w_[ii]);
      for (int j = 0; j < N; ++j) {
        const Cplx v = value(K.x_[ii], K.x_[static_cast<size_t>(j)]) * (wi * std::sqrt(K.w_[static_cast<size_t>(j)]));
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) throw Error(Errc::invalid_argument, "non-finite kernel entry");
        if (K.single_) {
          K.re32_(i, j) = static_cast<float>(v.real());
          K.im32_(i, j) = static_cast<float>(v.imag());
        } else {
          K.re64_(i, j) = v.real();
          K.im64_(i, j) = v.imag();
        }
      }
    });
    return K;
  }

 private:
  using RowF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Cplx stored(int i, int j) const {
    return single_ ? Cplx(re32_(i, j), im32_(i, j)) : Cplx(re64_(i, j), im64_(i, j));
  }
  void load_row(int i, Eigen::VectorXd& re, Eigen::VectorXd& im) const {
    if (single_) {
      re = re32_.row(i).transpose().cast<double>();
      im = im32_.row(i).transpose().cast<double>();
    } else {
      re = re64_.row(i).transpose();
      im = im64_.row(i).transpose();
    }
  }
  Cplx row_dot(int i, const CVec& x) const {
    Eigen::VectorXd re(n_), im(n_);
    load_row(i, re, im);
    const Eigen::VectorXd xr = x.real(), xi = x.imag();
    return {re.dot(xr) - im.dot(xi), re.dot(xi) + im.dot(xr)};
  }

  int n_ = 0;
  double lambda_ = 0;
  bool single_ = false;
  std::vector<double> x_, w_;
  RowF re32_, im32_;
  RowD re64_, im64_;
};

// Kernel of T_lambda: e^{i lambda phi(r,s)} a(r,s).  N = 0 picks the oversampling minimum.
inline DiscretizedKernel discretize(const PhaseSpec& spec, double lambda, int N = 0, const KernelOptions& o = {}) {
  if (!(lambda >= 0)) throw Error(Errc::invalid_argument, "lambda must be >= 0");
  const int need = required_N(lambda, o.oversample);
  if (N == 0) N = std::max(need, 16);
  if (N < need)
    throw Error(Errc::invalid_argument,
                "N=" + std::to_string(N) + " under-resolves lambda=" + std::to_string(lambda) + " (need " + std::to_string(need) + ")",
                need);
  return DiscretizedKernel::assemble(
      N, lambda,
      [&](double r, double s) { return std::polar(spec.amplitude(r, s), lambda * spec.phase(r, s)); }, o);
}

enum class NormMethod { lanczos, power };

struct NormOptions {
  NormMethod method = NormMethod::lanczos;
  double tol = 1e-10;  // on the singular value, relative
  int max_iter = 10000;  // applications of M^*M
  // The top of the spectrum is a near-flat plateau for rs-type phases; small bases stall there.
  int krylov = 120;
  int keep = 40;  // Ritz vectors kept at a restart
  int check_every = 20;  // Rayleigh-Ritz convergence test interval, in columns
  std::uint64_t seed = 1;
  int threads = 1;
};

struct OperatorNormEstimate {
  double value = 0;
  int iterations = 0;
  double residual = 0;  // ||A y - theta y|| / (2 sigma), a bound on the error in sigma
  bool converged = false;
};

namespace detail {

inline CVec random_start(int n, std::uint64_t seed) {
  Rng g = rng_for(seed, 0);
  CVec v(n);
  for (int i = 0; i < n; ++i) v(i) = Cplx(gaussian(g), gaussian(g));
  return v / v.norm();
}

inline double sigma_residual(const CVec& Ay, const CVec& y, double theta) {
  const double s = std::sqrt(std::max(theta, 0.0));
  return s > 0 ? (Ay - theta * y).norm() / (2.0 * s) : (Ay - theta * y).norm();
}

// Orthogonalise v against the first k columns of V twice (classical Gram-Schmidt, two passes).
inline double orthogonalize(const Eigen::MatrixXcd& V, int k, CVec& v) {
  for (int pass = 0; pass < 2; ++pass)
    if (k > 0) v -= V.leftCols(k) * (V.leftCols(k).adjoint() * v);
  return v.norm();
}

// Float storage perturbs entries by ~6e-8 relative, so Ritz values settle near 1e-9 and a
// tighter request only burns restarts.
inline double effective_tol(const DiscretizedKernel& K, const NormOptions& o) {
  return K.single_precision() ? std::max(o.tol, 1e-9) : o.tol;
}

}  // namespace detail

inline OperatorNormEstimate operator_norm_power(const DiscretizedKernel& K, const NormOptions& o = {}) {
  OperatorNormEstimate est;
  const double tol = detail::effective_tol(K, o);
  CVec x = detail::random_start(K.N(), o.seed);
  for (int it = 1; it <= o.max_iter; ++it) {
    const CVec Ax = K.apply_normal(x, o.threads);
    const double theta = x.dot(Ax).real();
    est.iterations = it;
    est.value = std::sqrt(std::max(theta, 0.0));
    est.residual = detail::sigma_residual(Ax, x, theta);
    if (est.residual <= tol * est.value || Ax.norm() == 0.0) {
      est.converged = true;
      return est;
    }
    x = Ax / Ax.norm();
  }
  return est;
}

// Lanczos on A = M^*M with full reorthogonalisation and thick restart: after `krylov`
// columns the top `keep` Ritz vectors are retained (with their images under A, so no extra
// products) and the basis is extended along the Krylov continuation vector.
inline OperatorNormEstimate operator_norm_lanczos(const DiscretizedKernel& K, const NormOptions& o = {}) {
  const int n = K.N();
  const int m = std::min(o.krylov, n);
  const int keep = std::clamp(o.keep, 1, std::max(1, m - 1));
  const int every = std::max(1, o.check_every);
  const double tol = detail::effective_tol(K, o);
  Eigen::MatrixXcd V(n, m), AV(n, m);
  OperatorNormEstimate est;
  CVec next = detail::random_start(n, o.seed);
  int cols = 0, since_check = 0;
  std::uint64_t extra = 0;
  for (;;) {
    bool exhausted = false;
    while (cols < m && since_check < every) {
      double nn = detail::orthogonalize(V, cols, next);
      if (nn < 1e-12) {
        // invariant subspace; a fresh random direction keeps the basis growing
        if (cols >= n) { exhausted = true; break; }
        next = detail::random_start(n, o.seed + 1000 + ++extra);
        nn = detail::orthogonalize(V, cols, next);
        if (nn < 1e-12) { exhausted = true; break; }
      }
      V.col(cols) = next / nn;
      AV.col(cols) = K.apply_normal(V.col(cols), o.threads);
      ++est.iterations;
      next = AV.col(cols);
      ++cols;
      ++since_check;
      if (est.iterations >= o.max_iter) break;
    }
    since_check = 0;
    Eigen::MatrixXcd H = V.leftCols(cols).adjoint() * AV.leftCols(cols);
    H = 0.5 * (H + H.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
    const int top = cols - 1;  // eigenvalues ascending
    const double theta = es.eigenvalues()(top);
    const CVec c = es.eigenvectors().col(top);
    const CVec y = V.leftCols(cols) * c, Ay = AV.leftCols(cols) * c;
    est.value = std::sqrt(std::max(theta, 0.0));
    est.residual = detail::sigma_residual(Ay, y, theta);
    if (est.residual <= tol * est.value || theta <= 0 || exhausted || cols < 2) {
      est.converged = est.residual <= tol * std::max(est.value, 1e-300) || theta <= 0;
      return est;
    }
    if (est.iterations >= o.max_iter) return est;
    if (cols < m) continue;
    const int k = std::min(keep, cols - 1);
    const Eigen::MatrixXcd C = es.eigenvectors().rightCols(k);
    const Eigen::MatrixXcd Vk = V.leftCols(cols) * C, AVk = AV.leftCols(cols) * C;
    V.leftCols(k) = Vk;
    AV.leftCols(k) = AVk;
    cols = k;
    // `next` still holds A v_last: the Krylov continuation, parallel in exact arithmetic to
    // every Ritz residual.  The residuals themselves are mostly rounding once they are small.
  }
}

inline OperatorNormEstimate operator_norm(const DiscretizedKernel& K, const NormOptions& o = {}) {
  OperatorNormEstimate e = o.method == NormMethod::power ? operator_norm_power(K, o) : operator_norm_lanczos(K, o);
  if (!e.converged)
    throw Error(Errc::nonconvergence, "operator norm did not converge after " + std::to_string(e.iterations) + " products",
                e.residual);
  return e;
}

// ||f||_{C^k} taken as the sum over |beta| <= k of sup |d^beta f|.
struct PhaseCalibration {
  double C_lower = 0;   // min over the grid of max(|phi_rs|, |phi_rss|)
  double A_upper = 1;   // max(||phi_rs||_{C^2}, 1) estimated on the grid
  double min_rs = 0, min_rss = 0;
};

inline PhaseCalibration calibrate_phase(const std::function<double(double, double)>& phi, int grid = 21, double h = 1e-2) {
  PhaseCalibration c;
  c.C_lower = std::numeric_limits<double>::infinity();
  c.min_rs = c.min_rss = std::numeric_limits<double>::infinity();
  const int ab[6][2] = {{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}};
  double sup[6] = {0, 0, 0, 0, 0, 0};
  for (int a = 0; a < grid; ++a)
    for (int b = 0; b < grid; ++b) {
      const double r = static_cast<double>(a) / (grid - 1), s = static_cast<double>(b) / (grid - 1);
      double d[6];
      for (int k = 0; k < 6; ++k) d[k] = mixed_partial<double>(phi, r, s, 1 + ab[k][0], 1 + ab[k][1], h, 4);
      for (int k = 0; k < 6; ++k) sup[k] = std::max(sup[k], std::abs(d[k]));
      c.C_lower = std::min(c.C_lower, std::max(std::abs(d[0]), std::abs(d[2])));
      c.min_rs = std::min(c.min_rs, std::abs(d[0]));
      c.min_rss = std::min(c.min_rss, std::abs(d[2]));
    }
  double a = 0;
  for (double v : sup) a += v;
  c.A_upper = std::max(a, 1.0);
  return c;
}

// Dichotomy contract at the grid points: |phi_rs| >= C or |phi_rss| >= C.
inline bool dichotomy_holds(const PhaseSpec& spec, int grid = 21, double h = 1e-2) {
  return calibrate_phase(spec.phase, grid, h).C_lower >= spec.C_lower * (1.0 - 1e-6);
}

inline double oio_bound(const PhaseSpec& spec, double lambda) {
  return std::pow(lambda, -0.25) / spec.C_lower * std::pow(spec.A_upper, 1.25) * spec.amp_c1;
}

struct DecayRow {
  double lambda = 0;
  int N = 0;
  double norm = 0, bound = 0, ratio = 0, residual = 0;
  int iterations = 0;
  bool single = false;
};

struct DecayReport {
  std::string phase;
  std::vector<DecayRow> rows;
  LinearFit fit;  // log norm against log lambda
  double kappa = 0;  // max norm / bound
  bool dichotomy = false;
};

struct DecayOptions {
  KernelOptions kernel;
  NormOptions norm;
  int min_N = 16;
  bool check_dichotomy = true;
};

inline DecayReport decay_scan(const PhaseSpec& spec, const std::vector<double>& lambdas, const DecayOptions& o = {}) {
  if (lambdas.size() < 2) throw Error(Errc::invalid_argument, "decay_scan needs two or more lambdas");
  DecayReport rep;
  rep.phase = spec.name;
  rep.dichotomy = !o.check_dichotomy || dichotomy_holds(spec);
  if (!rep.dichotomy) throw Error(Errc::invalid_argument, "phase '" + spec.name + "' violates the dichotomy contract");
  std::vector<double> xs, ys;
  for (double lam : lambdas) {
    if (!(lam > 0)) throw Error(Errc::invalid_argument, "lambdas must be positive");
    DecayRow row;
    row.lambda = lam;
    row.N = std::max(o.min_N, required_N(lam, o.kernel.oversample));
    const DiscretizedKernel K = discretize(spec, lam, row.N, o.kernel);
    const auto e = operator_norm(K, o.norm);
    row.single = K.single_precision();
    row.norm = e.value;
    row.iterations = e.iterations;
    row.residual = e.residual;
    row.bound = oio_bound(spec, lam);
    row.ratio = row.norm / row.bound;
    rep.kappa = std::max(rep.kappa, row.ratio);
    xs.push_back(std::log(lam));
    ys.push_back(std::log(row.norm));
    rep.rows.push_back(row);
  }
  rep.fit = fit_line(xs, ys);
  return rep;
}

// Main term of K_alpha with a_+ = a_- = 1:
// lambda^{(n-1)/2} / (T phi^{(n-1)/2}) * sum over the chosen signs of e^{+-i lambda phi}.
struct ModelKernelSpec {
  double lambda = 1, T = 1;
  int dim = 2;
  bool plus = true, minus = true;
};

inline double model_prefactor(double phi, const ModelKernelSpec& m) {
  const double e = 0.5 * (m.dim - 1);
  return std::pow(m.lambda, e) / (m.T * std::pow(phi, e));
}

inline Cplx model_kernel_value(double phi, const ModelKernelSpec& m) {
  if (!(phi >= 1.0)) throw Error(Errc::invalid_argument, "model kernel needs phi >= 1", phi);
  Cplx s = 0;
  if (m.plus) s += std::polar(1.0, m.lambda * phi);
  if (m.minus) s += std::polar(1.0, -m.lambda * phi);
  return model_prefactor(phi, m) * s;
}

inline DiscretizedKernel model_kernel(const std::function<double(double, double)>& phi, const ModelKernelSpec& m, int N = 0,
                                      const KernelOptions& o = {}) {
  if (m.dim < 2) throw Error(Errc::invalid_argument, "model kernel dimension must be >= 2");
  if (N == 0) N = std::max(16, required_N(m.lambda, o.oversample));
  if (N < required_N(m.lambda, o.oversample)) throw Error(Errc::invalid_argument, "N under-resolves lambda");
  return DiscretizedKernel::assemble(N, m.lambda, [&](double r, double s) { return model_kernel_value(phi(r, s), m); }, o);
}

}  // namespace geovar
