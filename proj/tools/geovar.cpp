// geovar: batch runner for the verification scans.

#include "config.hpp"

#include <geovar/geovar.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace geovar;
using namespace geovar::cli;

namespace {

constexpr const char* kOutEnv = "GEOVAR_OUT_DIR";

std::string num(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}
std::string num(long x) { return std::to_string(x); }
std::string num(int x) { return std::to_string(x); }

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw ConfigError("cannot write " + path.string());
    out_ << "# schema=1\n";
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

// Quote a free-text cell (error messages, words).
std::string quoted(const std::string& s) {
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

class Run {
 public:
  Run(const Settings& cfg, fs::path out) : cfg(cfg), out_(std::move(out)) {
    doc_["experiment"] = cfg.command();
    doc_["schema"] = 1;
    json c = json::object();
    // thread count and output path do not change results, so they stay out of the record
    for (const auto& k : cfg.keys())
      if (k.name != "threads" && k.name != "out") c[k.name] = cfg.raw(k.name);
    doc_["config"] = c;
    doc_["criteria"] = json::array();
    doc_["errors"] = json::array();
    doc_["counts"] = json::object();
    doc_["witnesses"] = json::object();
  }

  const Settings& cfg;

  int threads() const { return cfg.count("threads"); }
  std::uint64_t seed() const { return cfg.u64("seed"); }

  // op is "<=", ">=" or "=="; margin >= 0 iff the criterion passes.
  void criterion(const std::string& name, double value, const std::string& op, double threshold) {
    double margin = 0;
    if (op == "<=") margin = threshold - value;
    else if (op == ">=") margin = value - threshold;
    else margin = value == threshold ? 0.0 : -std::abs(value - threshold);
    const bool pass = std::isfinite(value) && margin >= 0;
    ok_ = ok_ && pass;
    doc_["criteria"].push_back({{"name", name}, {"pass", pass}, {"value", value}, {"op", op},
                                {"threshold", threshold}, {"margin", margin}});
  }
  void check(const std::string& name, bool holds) { criterion(name, holds ? 1.0 : 0.0, "==", 1.0); }

  void error(const std::string& where, const std::string& msg) {
    ok_ = false;
    doc_["errors"].push_back({{"where", where}, {"message", msg}});
  }

  json& counts() { return doc_["counts"]; }
  json& witnesses() { return doc_["witnesses"]; }
  json& results() { return doc_["results"]; }

  Csv csv(const std::string& name, const std::vector<std::string>& header) {
    return Csv(out_ / (name + ".csv"), header);
  }
  void plot(const std::string& name, const std::vector<double>& x, const std::vector<double>& y) {
    Csv c = csv(name, {"x", "y"});
    for (size_t i = 0; i < x.size(); ++i) c.row({num(x[i]), num(y[i])});
  }

  bool pass() const { return ok_; }

  void write() {
    doc_["pass"] = ok_;
    std::ofstream f(out_ / (cfg.command() + ".json"));
    f << doc_.dump(2) << '\n';
    if (!f) throw ConfigError("cannot write " + (out_ / (cfg.command() + ".json")).string());
  }

 private:
  fs::path out_;
  json doc_;
  bool ok_ = true;
};

// ---------------------------------------------------------------------------
// Key tables.  Every key is also a --flag of the same name.

std::vector<KeySpec> common_keys() {
  return {{"seed", Kind::u64, "1", "random seed"},
          {"threads", Kind::count, "1", "worker threads"},
          {"out", Kind::text, "geovar_out", "output directory (overridden by $GEOVAR_OUT_DIR)"}};
}

struct Command {
  std::string name, help;
  std::vector<KeySpec> keys;
  std::function<void(Run&)> run;
};

void reject_models(const Settings& s, const std::string& key, const std::vector<ModelId>& allowed) {
  for (ModelId m : s.models(key))
    if (std::find(allowed.begin(), allowed.end(), m) == allowed.end())
      throw ConfigError(s.command() + ": model " + to_string(m) + " is not supported here");
}

Geodesic x_axis(const Model& H) {
  Vec e(3);
  e << 1, 0, 0;
  const double inf = std::numeric_limits<double>::infinity();
  return H.geodesic(H.tangent(H.origin(), e), -inf, inf);
}

// ---------------------------------------------------------------------------

void run_verify_variation(Run& r) {
  const auto& c = r.cfg;
  reject_models(c, "model", {ModelId::E2, ModelId::H2, ModelId::H3});
  const auto models = c.models("model");
  const int n = c.count("samples"), n_closed = static_cast<int>(c.u64("closed_form_samples"));
  const double lo = c.real("rho_min"), hi = c.real("rho_max");
  if (hi < lo) throw ConfigError("rho_max < rho_min");
  Csv rows = r.csv("verify_variation", {"model", "id", "rho0", "d2_intrinsic", "d2_normal", "d2_fd", "d3_intrinsic",
                                        "d3_normal", "d3_fd", "err2", "err3", "err_fd", "error"});
  for (ModelId id : models) {
    const std::string m = to_string(id);
    try {
      const auto rep = variation_agreement(Model(id), n, r.seed(), lo, hi, r.threads());
      for (const auto& s : rep.samples)
        rows.row({m, num(s.id), num(s.rho0), num(s.d2_int), num(s.d2_nc), num(s.d2_fd), num(s.d3_int),
                  num(s.d3_nc), num(s.d3_fd), num(s.e2), num(s.e3), num(s.e_fd), quoted(s.error)});
      r.criterion(m + ".second_variation_vs_normal_coords", rep.max_e2, "<=", c.real("tol2"));
      r.criterion(m + ".third_variation_vs_normal_coords", rep.max_e3, "<=", c.real("tol3"));
      r.criterion(m + ".analytic_vs_finite_differences", rep.max_fd, "<=", c.real("tol_fd"));
      r.criterion(m + ".failed_configs", rep.failures, "==", 0);
      r.counts()[m] = {{"samples", n}, {"failures", rep.failures}};
      r.witnesses()[m] = {{"worst_second", rep.worst_e2}, {"worst_third", rep.worst_e3}, {"worst_fd", rep.worst_fd}};
    } catch (const Error& e) {
      r.error(m, e.what());
    }
  }
  if (n_closed > 0 && std::find(models.begin(), models.end(), ModelId::H2) != models.end()) {
    try {
      const auto rep = h2_closed_form_check(n_closed, r.seed(), lo, hi, r.threads());
      Csv cf = r.csv("closed_form_h2", {"id", "rho0", "d2_rr", "d2_rr_closed", "abs_d2_rs", "abs_d2_rs_closed", "error"});
      for (const auto& s : rep.samples)
        cf.row({num(s.id), num(s.rho0), num(s.d2_rr), num(s.d2_rr_closed), num(s.d2_rs), num(s.d2_rs_closed),
                quoted(s.error)});
      r.criterion("h2.closed_form_rr", rep.max_err_rr, "<=", c.real("tol_closed"));
      r.criterion("h2.closed_form_rs", rep.max_err_rs, "<=", c.real("tol_closed"));
      r.criterion("h2.closed_form_failed_configs", rep.failures, "==", 0);
      r.counts()["h2_closed_form"] = {{"samples", n_closed}, {"failures", rep.failures}};
      r.witnesses()["h2_closed_form"] = rep.worst;
    } catch (const Error& e) {
      r.error("h2_closed_form", e.what());
    }
  }
}

void run_lemma2d(Run& r) {
  const auto& c = r.cfg;
  reject_models(c, "model", {ModelId::H2, ModelId::SPinch});
  const ModelId id = c.models("model").front();
  if (c.models("model").size() != 1) throw ConfigError("lemma2d takes one model");
  const double T = c.real("T");
  if (T < 3) throw ConfigError("lemma2d needs T >= 3 (rho0 is drawn from [3, T])");
  ScanOptions so;
  so.threads = r.threads();
  const auto rep = lemma2d_scan(Model(id), T, c.count("samples"), r.seed(), so, c.real("exponent_bound"), c.real("c2"));
  Csv rows = r.csv("lemma2d", {"id", "rho0", "transversality", "eta_angle", "d2_rs", "d3_rss", "exponent", "error"});
  for (const auto& s : rep.samples)
    rows.row({num(s.id), num(s.rho0), num(s.transversality), num(s.eta_angle), num(s.d2_rs), num(s.d3_rss),
              num(s.exponent), quoted(s.error)});
  r.criterion("counterexamples", rep.counterexamples, "==", 0);
  r.criterion("calibrated_exponent", rep.calibrated, "<=", c.real("exponent_bound"));
  r.criterion("failed_configs", rep.failures, "==", 0);
  r.counts() = {{"samples", rep.samples.size()}, {"near_radial", rep.near_radial}, {"failures", rep.failures}};
  r.results() = {{"calibrated", rep.calibrated}, {"calibrated_c1", rep.calibrated_c1}, {"calibrated_c3", rep.calibrated_c3}};
  if (rep.worst >= 0) {
    const auto& w = rep.samples[static_cast<size_t>(rep.worst)];
    r.witnesses()["weakest"] = {{"id", w.id}, {"rho0", w.rho0}, {"d2_rs", w.d2_rs}, {"d3_rss", w.d3_rss},
                                {"eta_angle", w.eta_angle}, {"exponent", w.exponent}};
  }
}

void run_lemma3d(Run& r) {
  const auto& c = r.cfg;
  const double lo = c.real("rho_min"), hi = c.real("rho_max");
  if (hi < lo) throw ConfigError("rho_max < rho_min");
  ScanOptions so;
  so.threads = r.threads();
  const auto rep = lemma3d_check(Model(ModelId::H3), c.count("samples"), r.seed(), so, lo, hi);
  Csv rows = r.csv("lemma3d", {"id", "rho0", "angle", "lhs", "rhs", "rel_err", "error"});
  for (const auto& s : rep.samples)
    rows.row({num(s.id), num(s.rho0), num(s.angle), num(s.lhs), num(s.rhs), num(s.rel_err), quoted(s.error)});
  r.criterion("coplanarity_angle", rep.max_angle, "<=", c.real("tol_angle"));
  r.criterion("norm_identity", rep.max_rel_err, "<=", c.real("tol_identity"));
  r.criterion("failed_configs", rep.failures, "==", 0);
  r.counts() = {{"samples", rep.samples.size()}, {"failures", rep.failures}};
  r.witnesses() = {{"worst_angle", rep.worst_angle}, {"worst_identity", rep.worst_identity}};
}

void run_isolation(Run& r) {
  const auto& c = r.cfg;
  reject_models(c, "model", {ModelId::H2, ModelId::H3});
  IsolationOptions o;
  o.grid = c.count("grid");
  o.eps = c.real("eps");
  o.delta = c.real("delta");
  o.rho_lo = c.real("rho_min");
  o.rho_hi = c.real("rho_max");
  o.closed_form_probes = static_cast<int>(c.u64("probes"));
  if (o.grid < 2) throw ConfigError("grid must be at least 2");
  if (o.rho_hi < o.rho_lo) throw ConfigError("rho_max < rho_min");
  Csv rows = r.csv("isolation", {"model", "id", "rho0", "r1", "s1", "eps", "checked", "violations", "min_margin",
                                 "min_perp2", "perp_violations", "min_sinh", "max_coth", "closed_form_err", "error"});
  for (ModelId id : c.models("model")) {
    const std::string m = to_string(id);
    const auto rep = isolation_check(Model(id), c.count("samples"), r.seed(), o, r.threads());
    for (const auto& s : rep.samples)
      rows.row({m, num(s.id), num(s.rho0), num(s.r1), num(s.s1), num(s.eps), num(s.checked), num(s.violations),
                num(s.min_margin), num(s.min_perp2), num(s.perp_violations), num(s.min_sinh), num(s.max_coth),
                num(s.closed_form_err), quoted(s.error)});
    r.criterion(m + ".separation_violations", rep.violations, "==", 0);
    r.criterion(m + ".perp_violations", rep.perp_violations, "==", 0);
    r.criterion(m + ".hypothesis_failures", rep.hypothesis_failures, "==", 0);
    r.criterion(m + ".closed_form_rr", rep.max_closed_form_err, "<=", c.real("tol_closed"));
    r.criterion(m + ".failed_configs", rep.failures, "==", 0);
    r.counts()[m] = {{"checked", rep.checked}, {"failures", rep.failures}};
    r.results()[m] = {{"min_margin", rep.min_margin}};
  }
}

void run_growth(Run& r) {
  const auto& c = r.cfg;
  reject_models(c, "model", {ModelId::E2, ModelId::H2, ModelId::H3});
  const int order = c.count("max_order");
  if (order < 2 || order > 4) throw ConfigError("max_order must be 2, 3 or 4");
  const auto rhos = c.reals("rho");
  if (rhos.size() < 2) throw ConfigError("rho needs two or more values");
  ScanOptions so;
  so.threads = r.threads();
  Csv rows = r.csv("growth", {"model", "rho", "order", "max_sum", "failures"});
  for (ModelId id : c.models("model")) {
    const std::string m = to_string(id);
    const auto rep = growth_scan(Model(id), order, rhos, c.count("samples"), r.seed(), so);
    int failures = 0;
    for (const auto& row : rep.rows) {
      failures += row.failures;
      for (int k = 2; k <= order; ++k)
        rows.row({m, num(row.rho), num(k), num(row.max_sum[static_cast<size_t>(k)]), num(row.failures)});
    }
    json fits = json::array();
    for (int k = 2; k <= order; ++k) {
      const auto& f = rep.fits[static_cast<size_t>(k)];
      fits.push_back({{"order", k}, {"slope", f.slope}, {"intercept", f.intercept}, {"max_residual", f.max_residual}});
      r.criterion(m + ".fit_residual_order" + num(k), f.max_residual, "<=", c.real("residual_max"));
      std::vector<double> x, y;
      for (const auto& row : rep.rows) {
        x.push_back(row.rho);
        y.push_back(std::log(row.max_sum[static_cast<size_t>(k)]));
      }
      r.plot("growth_plot_" + m + "_order" + num(k), x, y);
    }
    r.criterion(m + ".failed_configs", failures, "==", 0);
    r.results()[m] = {{"fits", fits}, {"rr_slope", rep.rr_fit.slope}};
  }
}

void run_rauch(Run& r) {
  const auto& c = r.cfg;
  const double t_max = c.real("t_max"), slack = c.real("slack");
  const int n_t = c.count("n_t");
  const auto sp = rauch_scan(Model(ModelId::SPinch), c.count("samples"), r.seed(), t_max, n_t, 0.5, r.threads());
  const int ne = c.count("equality_samples");
  const auto e2 = rauch_scan(Model(ModelId::E2), ne, r.seed() + 1, t_max, n_t, 2.0, r.threads());
  const auto h2 = rauch_scan(Model(ModelId::H2), ne, r.seed() + 2, t_max, n_t, 2.0, r.threads());
  Csv rows = r.csv("rauch", {"model", "id", "max_violation", "worst_t", "lower_gap", "upper_gap", "error"});
  for (const auto* rep : {&sp, &e2, &h2})
    for (const auto& x : rep->rows)
      rows.row({to_string(rep->model), num(x.id), num(x.max_violation), num(x.worst_t), num(x.lower_gap),
                num(x.upper_gap), quoted(x.error)});
  r.criterion("spinch.envelope_violation", sp.max_violation, "<=", slack);
  r.criterion("spinch.failed_geodesics", sp.failures, "==", 0);
  r.criterion("e2.lower_equality", e2.max_lower_gap, "<=", slack);
  r.criterion("h2.upper_equality", h2.max_upper_gap, "<=", slack);
  r.criterion("e2.envelope_violation", e2.max_violation, "<=", slack);
  r.criterion("h2.envelope_violation", h2.max_violation, "<=", slack);
  r.witnesses()["spinch"] = {{"worst", sp.worst}, {"max_violation", sp.max_violation}};

  const int nj = c.count("jacobi_samples");
  for (ModelId id : {ModelId::H2, ModelId::E2}) {
    const auto j = jacobi_ode_check(Model(id), nj, r.seed() + 3, c.real("jacobi_t_max"), c.real("step"), 100, r.threads());
    r.criterion(std::string(to_string(id)) + ".jacobi_closed_form_vs_ode", j.max_dev, "<=", c.real("tol_jacobi"));
    r.witnesses()[std::string(to_string(id)) + "_jacobi"] = {{"worst", j.worst}, {"t", j.worst_t}};
  }
  r.counts() = {{"spinch_geodesics", sp.rows.size()}, {"equality_geodesics", ne}, {"jacobi_fields", nj}};
}

void run_toponogov(Run& r) {
  const auto& c = r.cfg;
  reject_models(c, "model", {ModelId::H2, ModelId::SPinch});
  const double R = c.real("R");
  const auto Ts = c.reals("T");
  ConeOptions o;
  o.threads = r.threads();
  o.vertex_radius = c.real("vertex_radius");
  o.slack = c.real("slack");
  Csv rows = r.csv("toponogov", {"model", "R", "T", "theta", "n", "max_ratio", "boundary_ratio", "violations", "failures"});
  Csv viol = r.csv("toponogov_violations", {"model", "T", "t", "angle", "distance", "foot_s", "branch"});
  std::uint64_t k = 0;
  for (ModelId id : c.models("model")) {
    const Model M(id);
    for (double T : Ts) {
      const std::string tag = std::string(to_string(id)) + ".T" + num(T);
      Rng g = rng_for(r.seed(), (1ull << 40) + k);
      const std::uint64_t seed = r.seed() + 7919 * ++k;
      try {
        const Geodesic core = cone_core(M, g, T, R, o.vertex_radius);
        const auto rep = cone_in_tube_check(M, core, R, T, c.count("samples"), seed, o);
        rows.row({to_string(id), num(R), num(T), num(rep.theta), num(rep.n), num(rep.max_ratio),
                  num(rep.boundary_ratio), num(static_cast<long>(rep.violations.size())), num(rep.failures)});
        for (const auto& v : rep.violations)
          viol.row({to_string(id), num(T), num(v.t), num(v.angle), num(v.distance), num(v.foot_s), num(v.branch)});
        r.criterion(tag + ".violations", static_cast<double>(rep.violations.size()), "==", 0);
        r.criterion(tag + ".failed_samples", rep.failures, "==", 0);
        r.results()[tag] = {{"theta", rep.theta}, {"max_ratio", rep.max_ratio}, {"boundary_ratio", rep.boundary_ratio}};
      } catch (const Error& e) {
        r.error(tag, e.what());
      }
    }
  }
}

void run_oio_scan(Run& r) {
  const auto& c = r.cfg;
  std::vector<PhaseSpec> phases;
  for (const auto& p : c.words("phase")) {
    if (p == "rs") phases.push_back(phase_rs());
    else if (p == "rs2") phases.push_back(phase_rs2());
    else throw ConfigError("unknown phase '" + p + "' (rs, rs2)");
  }
  const auto lambdas = c.reals("lambda");
  if (lambdas.size() < 2) throw ConfigError("lambda needs two or more values");
  DecayOptions o;
  o.kernel.oversample = c.real("oversample");
  o.kernel.threads = r.threads();
  o.norm.tol = c.real("tol");
  o.norm.max_iter = c.count("max_iter");
  o.norm.threads = r.threads();
  o.norm.seed = r.seed();
  Csv rows = r.csv("oio_decay", {"phase", "lambda", "N", "norm", "bound", "ratio", "residual", "iterations", "single"});
  for (const auto& spec : phases) {
    try {
      const auto rep = decay_scan(spec, lambdas, o);
      std::vector<double> x, y;
      for (const auto& row : rep.rows) {
        rows.row({spec.name, num(row.lambda), num(row.N), num(row.norm), num(row.bound), num(row.ratio),
                  num(row.residual), num(row.iterations), num(row.single ? 1 : 0)});
        x.push_back(std::log(row.lambda));
        y.push_back(std::log(row.norm));
      }
      r.plot("oio_plot_" + spec.name, x, y);
      if (spec.name == "rs") {
        r.criterion("rs.slope_lower", rep.fit.slope, ">=", c.real("rs_slope_min"));
        r.criterion("rs.slope_upper", rep.fit.slope, "<=", c.real("rs_slope_max"));
      } else {
        r.criterion(spec.name + ".slope", rep.fit.slope, "<=", c.real("rs2_slope_max"));
        r.criterion(spec.name + ".kappa", rep.kappa, "<=", c.real("kappa_max"));
      }
      r.results()[spec.name] = {{"slope", rep.fit.slope}, {"intercept", rep.fit.intercept}, {"kappa", rep.kappa}};
    } catch (const Error& e) {
      r.error(spec.name, e.what());
    }
  }
}

SchottkyGroup group_from(const Settings& c) {
  try {
    return schottky_group(c.real("l1"), c.real("l2"), c.real("separation"));
  } catch (const Error& e) {
    throw ConfigError(std::string("generators: ") + e.what());
  }
}

void run_lattice_count(Run& r) {
  const auto& c = r.cfg;
  const Model H(ModelId::H2);
  const SchottkyGroup group = group_from(c);
  const int L = c.count("word_length");
  const double tau = c.real("tau");
  const int k_lo = static_cast<int>(c.u64("k_lo")), k_hi = c.count("k_hi");
  if (k_hi < k_lo) throw ConfigError("k_hi < k_lo");
  EnumerationOptions eo;
  eo.tau_max = std::max(tau, std::ldexp(1.0, k_hi + 1));

  // free-group word counts
  const auto words = enumerate_words(group, L, H.origin(), eo);
  Csv wc = r.csv("lattice_words", {"length", "elements"});
  long mismatched = 0;
  for (int l = 0; l <= L; ++l) {
    const long got = l < static_cast<int>(words.words_by_length.size()) ? words.words_by_length[static_cast<size_t>(l)] : 0;
    wc.row({num(l), num(got)});
    long expect = l == 0 ? 1 : 4;
    for (int i = 1; i < l; ++i) expect *= 3;
    if (got != expect) ++mismatched;
  }
  r.criterion("free_word_counts_mismatched_lengths", mismatched, "==", 0);
  r.criterion("word_duplicates", words.duplicates, "==", 0);

  // ball enumeration and tube split along a's axis
  const auto en = enumerate_ball(group, tau, H.origin(), eo);
  const Geodesic core = x_axis(H);
  const auto part = tube_partition(en, core, c.real("R_prime"));
  Csv el = r.csv("lattice_elements", {"word", "trace", "displacement", "in_tube"});
  for (size_t i = 0; i < en.elements.size(); ++i) {
    const auto& e = en.elements[i];
    el.row({quoted(e.word), num(static_cast<double>(e.trace())), num(static_cast<double>(e.disp)),
            num(part.core_distance[i] <= part.R_prime ? 1 : 0)});
  }
  std::vector<double> taus, logn;
  for (double t = 1; t <= tau + 1e-12; t += 1) {
    const long n = count_within(en, t);
    if (n > 1) taus.push_back(t), logn.push_back(std::log(static_cast<double>(n)));
  }
  if (taus.size() >= 2) {
    const auto fit = growth_fit(en, taus);
    r.plot("lattice_plot", taus, logn);
    r.results()["growth"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"max_residual", fit.max_residual}};
  }

  // cyclic subgroup along the core
  const auto cyc = enumerate_ball(cyclic_group(c.real("cyclic_ell")), std::ldexp(1.0, k_hi + 1), H.origin(), eo);
  const auto cpart = tube_partition(cyc, core, c.real("R_prime"));
  const auto d = dyadic_tube_count(cyc, cpart, k_lo, k_hi);
  Csv dy = r.csv("lattice_dyadic", {"k", "count", "count_over_2k"});
  json table = json::array();
  for (int k = k_lo; k <= k_hi; ++k) {
    const long n = d.counts[static_cast<size_t>(k)];
    dy.row({num(k), num(n), num(static_cast<double>(n) / std::ldexp(1.0, k))});
    table.push_back({{"k", k}, {"count", n}});
  }
  r.criterion("cyclic_dyadic_C", d.C, "<=", c.real("C_max"));
  r.results()["cyclic_dyadic"] = {{"C", d.C}, {"table", table}};
  r.counts() = {{"ball_elements", en.elements.size()}, {"in_tube", part.in_tube.size()},
                {"near_collisions", en.near_collisions}, {"cyclic_elements", cyc.elements.size()}};
  r.witnesses()["min_displacement"] = en.min_displacement;
}

void run_kernel_sum(Run& r) {
  const auto& c = r.cfg;
  const Model H(ModelId::H2);
  const SchottkyGroup group = group_from(c);
  StableSumOptions o;
  o.lambda = c.real("lambda");
  o.R_prime = c.real("R_prime");
  o.grid = c.count("grid");
  if (o.grid < 2) throw ConfigError("grid must be at least 2");
  const auto Ts = c.reals("T");
  for (double T : Ts)
    if (T < 1) throw ConfigError("T values must be at least 1");
  const auto rep = stable_sum_scan(H, group, x_axis(H), Ts, o);
  Csv rows = r.csv("kernel_sum", {"T", "elements", "in_tube", "used", "sum", "bound", "ratio", "r", "s"});
  Csv dy = r.csv("kernel_sum_dyadic", {"T", "k", "count"});
  json out = json::array();
  for (const auto& row : rep.rows) {
    rows.row({num(row.T), num(row.elements), num(row.in_tube), num(row.used), num(row.sum), num(row.bound),
              num(row.ratio), num(row.r), num(row.s)});
    for (size_t k = 0; k < row.dyadic.size(); ++k) dy.row({num(row.T), num(static_cast<int>(k)), num(row.dyadic[k])});
    out.push_back({{"T", row.T}, {"sum", row.sum}, {"bound", row.bound}, {"ratio", row.ratio}});
  }
  r.check("monotone_in_T", rep.monotone);
  r.criterion("kappa_prime", rep.kappa_prime, "<=", c.real("kappa_max"));
  r.results() = {{"kappa_prime", rep.kappa_prime}, {"rows", out}};
}

std::vector<Command> commands() {
  return {
      {"verify-variation", "intrinsic vs normal-coordinate vs finite-difference mixed partials",
       {{"model", Kind::models, "e2,h2,h3", "models (e2, h2, h3)"},
        {"samples", Kind::count, "100", "configurations per model"},
        {"rho_min", Kind::positive, "3", "smallest rho0"},
        {"rho_max", Kind::positive, "10", "largest rho0"},
        {"tol2", Kind::positive, "1e-6", "second variation, relative"},
        {"tol3", Kind::positive, "1e-5", "third variation, relative"},
        {"tol_fd", Kind::positive, "1e-4", "analytic vs finite differences, relative"},
        {"closed_form_samples", Kind::u64, "1000", "h2 closed-form configurations (0 skips)"},
        {"tol_closed", Kind::positive, "1e-8", "closed-form absolute tolerance"}},
       run_verify_variation},
      {"lemma2d", "dichotomy scan for the mixed partials in dimension 2",
       {{"model", Kind::models, "h2", "h2 or spinch"},
        {"T", Kind::positive, "10", "scan scale"},
        {"samples", Kind::count, "10000", "configurations"},
        {"exponent_bound", Kind::positive, "10", "counterexample exponent"},
        {"c2", Kind::positive, "1", "near-radial split exponent"}},
       run_lemma2d},
      {"lemma3d", "coplanarity and norm identity in h3",
       {{"samples", Kind::count, "1000", "configurations"},
        {"rho_min", Kind::positive, "3", "smallest rho0"},
        {"rho_max", Kind::positive, "8", "largest rho0"},
        {"tol_angle", Kind::positive, "1e-6", "angle tolerance (rad)"},
        {"tol_identity", Kind::positive, "1e-6", "identity tolerance, relative"}},
       run_lemma3d},
      {"isolation", "separation of near-critical points",
       {{"model", Kind::models, "h2,h3", "h2, h3"},
        {"samples", Kind::count, "20", "configurations"},
        {"grid", Kind::count, "100", "grid points per side"},
        {"eps", Kind::positive, "1e-3", "tilt bound"},
        {"delta", Kind::positive, "1e-2", "separation floor"},
        {"rho_min", Kind::positive, "6", "smallest rho0"},
        {"rho_max", Kind::positive, "10", "largest rho0"},
        {"probes", Kind::u64, "4", "closed-form probes per configuration"},
        {"tol_closed", Kind::positive, "1e-8", "closed-form absolute tolerance"}},
       run_isolation},
      {"growth", "growth of iterated partials with distance",
       {{"model", Kind::models, "h2", "e2, h2, h3"},
        {"max_order", Kind::count, "4", "highest order (2..4)"},
        {"rho", Kind::positives, "2,4,6,8", "distances"},
        {"samples", Kind::count, "5", "configurations per distance"},
        {"residual_max", Kind::positive, "1", "bound on log-fit residuals"}},
       run_growth},
      {"rauch", "Rauch envelope on spinch, equality branches, Jacobi closed forms vs ODE",
       {{"samples", Kind::count, "100", "spinch geodesics"},
        {"t_max", Kind::positive, "8", "geodesic length"},
        {"n_t", Kind::count, "32", "samples along each geodesic"},
        {"slack", Kind::positive, "1e-8", "relative slack"},
        {"equality_samples", Kind::count, "10", "e2 and h2 geodesics"},
        {"jacobi_samples", Kind::count, "20", "Jacobi fields per model"},
        {"jacobi_t_max", Kind::positive, "10", "Jacobi field length"},
        {"step", Kind::positive, "1e-3", "RK4 step"},
        {"tol_jacobi", Kind::positive, "1e-8", "closed form vs ODE"}},
       run_rauch},
      {"toponogov", "cone-in-tube property",
       {{"model", Kind::models, "h2,spinch", "h2, spinch"},
        {"R", Kind::positive, "1", "tube radius"},
        {"T", Kind::positives, "5,8,12", "cone lengths"},
        {"samples", Kind::count, "10000", "samples per (model, T)"},
        {"vertex_radius", Kind::positive, "0.5", "vertex ball radius"},
        {"slack", Kind::positive, "1e-9", "relative slack on R"}},
       run_toponogov},
      {"oio-scan", "oscillatory-integral operator norm decay",
       {{"phase", Kind::words, "rs,rs2", "rs, rs2"},
        {"lambda", Kind::positives, "10^2,10^2.5,10^3,10^3.5,10^4", "frequencies"},
        {"oversample", Kind::positive, "8", "grid points per period"},
        {"tol", Kind::positive, "1e-10", "norm solver tolerance"},
        {"max_iter", Kind::count, "10000", "operator products"},
        {"rs_slope_min", Kind::real, "-0.55", "rs slope window"},
        {"rs_slope_max", Kind::real, "-0.45", "rs slope window"},
        {"rs2_slope_max", Kind::real, "-0.22", "rs2 slope ceiling"},
        {"kappa_max", Kind::positive, "10", "rs2 constant ceiling"}},
       run_oio_scan},
      {"lattice-count", "Schottky enumeration, word counts and dyadic tube counts",
       {{"l1", Kind::positive, "2", "translation length of a"},
        {"l2", Kind::positive, "2", "translation length of b"},
        {"separation", Kind::positive, "3", "distance between the axes"},
        {"word_length", Kind::count, "8", "longest word for the free-group count"},
        {"tau", Kind::positive, "12", "ball radius"},
        {"R_prime", Kind::positive, "1", "tube radius proxy"},
        {"cyclic_ell", Kind::positive, "2", "translation length of the cyclic group"},
        {"k_lo", Kind::u64, "2", "first annulus"},
        {"k_hi", Kind::count, "10", "last annulus"},
        {"C_max", Kind::positive, "2", "ceiling on count_k / 2^k"}},
       run_lattice_count},
      {"kernel-sum", "stable-sum bound for model-kernel magnitudes",
       {{"lambda", Kind::positive, "100", "frequency"},
        {"T", Kind::positives, "8,12,16", "times"},
        {"R_prime", Kind::positive, "1", "tube radius proxy"},
        {"grid", Kind::count, "17", "(r, s) nodes per side"},
        {"l1", Kind::positive, "2", "translation length of a"},
        {"l2", Kind::positive, "2", "translation length of b"},
        {"separation", Kind::positive, "3", "distance between the axes"},
        {"kappa_max", Kind::positive, "10", "ceiling on the fitted constant"}},
       run_kernel_sum},
  };
}

std::vector<KeySpec> all_keys(const Command& c) {
  auto keys = common_keys();
  keys.insert(keys.end(), c.keys.begin(), c.keys.end());
  return keys;
}

// Checks every section of the file, not only the one being run, so typos anywhere are reported.
void apply_file(const ConfigFile& cf, const std::vector<Command>& cmds, Settings& s) {
  for (const auto& [section, entries] : cf.sections) {
    std::vector<KeySpec> keys;
    if (section == "common") {
      keys = common_keys();
    } else {
      auto it = std::find_if(cmds.begin(), cmds.end(), [&](const Command& c) { return c.name == section; });
      if (it == cmds.end()) throw ConfigError("unknown config section [" + section + "]");
      keys = all_keys(*it);
    }
    Settings check(section, keys);
    for (const auto& [k, v] : entries) check.set(k, v);
  }
  if (auto it = cf.sections.find("common"); it != cf.sections.end())
    for (const auto& [k, v] : it->second) s.set(k, v);
  if (auto it = cf.sections.find(s.command()); it != cf.sections.end())
    for (const auto& [k, v] : it->second) s.set(k, v);
}

}  // namespace

int main(int argc, char** argv) {
  const auto cmds = commands();
  CLI::App app{"geovar: verification scans for geodesic variations, comparison geometry, oscillatory integrals and lattice counts"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "config file ([common] and per-command sections)");

  std::map<std::string, std::map<std::string, std::pair<CLI::Option*, std::string>>> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    subs[c.name] = sub;
    sub->add_option("--config", config_path, "config file");
    for (const auto& k : all_keys(c)) {
      auto& slot = flags[c.name][k.name];
      slot.first = sub->add_option("--" + k.name, slot.second, k.help + " [" + k.fallback + "]");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const Command* cmd = nullptr;
  for (const auto& c : cmds)
    if (subs[c.name]->parsed()) cmd = &c;

  std::unique_ptr<Settings> settings;
  fs::path out;
  try {
    settings = std::make_unique<Settings>(cmd->name, all_keys(*cmd));
    if (!config_path.empty()) apply_file(read_config(config_path), cmds, *settings);
    if (const char* env = std::getenv(kOutEnv); env && *env) settings->set("out", env);
    for (const auto& [name, slot] : flags[cmd->name])
      if (slot.first->count() > 0) settings->set(name, slot.second);
    out = settings->text("out");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw ConfigError("cannot create output directory " + out.string() + ": " + ec.message());
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  const auto t0 = std::chrono::steady_clock::now();
  Run run(*settings, out);
  try {
    cmd->run(run);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    run.error(cmd->name, e.what());
  } catch (const std::exception& e) {
    run.error(cmd->name, e.what());
  }
  try {
    run.write();
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << cmd->name << ": " << (run.pass() ? "pass" : "FAIL") << " in " << wall << " s, results in "
            << out.string() << '\n';
  return run.pass() ? 0 : 1;
}
