#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kflock/errors.hpp"
#include "kflock/grid_oracle.hpp"
#include "kflock/io.hpp"
#include "kflock/kinetic_particles.hpp"
#include "kflock/phase_core.hpp"

namespace kflock {

struct AssertionResult {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct SnapshotRecord {
  double t = 0.0;
  double total_mass = 0.0;
  double support_radius = 0.0;
  std::vector<std::pair<double, double>> lp_norms;  // (p, ||f||_p)
  double max_density_bound_ratio = 0.0;
  double velocity_variance = 0.0;
  double spatial_diameter = 0.0;
  std::optional<double> field_residual;
};

struct RunMetadata {
  std::string config_hash;
  std::string solver_id;
  std::uint64_t seed = 0;
};

struct DiagnosticsReport {
  RunMetadata meta;
  std::vector<SnapshotRecord> records;
  std::vector<AssertionResult> assertions;

  bool all_pass() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const auto& a) { return a.pass; });
  }

  std::vector<std::string> failed() const {
    std::vector<std::string> out;
    for (const auto& a : assertions)
      if (!a.pass) out.push_back(a.name);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["metadata"] = {{"config_hash", meta.config_hash}, {"solver", meta.solver_id}, {"seed", meta.seed}};
    j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
      nlohmann::json rec = {{"t", r.t},
                            {"total_mass", r.total_mass},
                            {"support_radius", r.support_radius},
                            {"max_density_bound_ratio", r.max_density_bound_ratio},
                            {"velocity_variance", r.velocity_variance},
                            {"spatial_diameter", r.spatial_diameter}};
      rec["lp_norms"] = nlohmann::json::array();
      for (const auto& [p, v] : r.lp_norms) rec["lp_norms"].push_back({{"p", p}, {"value", v}});
      rec["field_residual"] = r.field_residual ? nlohmann::json(*r.field_residual) : nlohmann::json();
      j["records"].push_back(rec);
    }
    j["assertions"] = nlohmann::json::array();
    for (const auto& a : assertions)
      j["assertions"].push_back(
          {{"name", a.name}, {"value", a.value}, {"tolerance", a.tolerance}, {"pass", a.pass}});
    return j;
  }

  /// Flat time series; lp columns follow the p values of the first record.
  std::string to_csv() const {
    std::ostringstream os;
    os << "t,total_mass,support_radius,max_density_bound_ratio,velocity_variance,spatial_diameter,"
          "field_residual";
    if (!records.empty())
      for (const auto& [p, v] : records.front().lp_norms) os << ",lp_" << fmt_num(p);
    os << '\n';
    for (const auto& r : records) {
      os << fmt_num(r.t) << ',' << fmt_num(r.total_mass) << ',' << fmt_num(r.support_radius) << ','
         << fmt_num(r.max_density_bound_ratio) << ',' << fmt_num(r.velocity_variance) << ','
         << fmt_num(r.spatial_diameter) << ',' << (r.field_residual ? fmt_num(*r.field_residual) : "");
      for (const auto& [p, v] : r.lp_norms) os << ',' << fmt_num(v);
      os << '\n';
    }
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Order parameters

struct FlockingMetrics {
  double velocity_variance = 0.0;
  double velocity_diameter = 0.0;
  double spatial_diameter = 0.0;
};

namespace detail {

inline double set_diameter(std::span<const Vec> pts, int dim) {
  if (pts.empty()) return 0.0;
  if (dim == 1) {
    auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(),
                                        [](const Vec& a, const Vec& b) { return a[0] < b[0]; });
    return (*hi)[0] - (*lo)[0];
  }
  double m = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) m = std::max(m, distance(pts[i], pts[j]));
  return m;
}

inline FlockingMetrics weighted_metrics(std::span<const Vec> x, std::span<const Vec> v,
                                        std::span<const double> w, int dim) {
  FlockingMetrics out;
  if (x.empty()) return out;
  double total = 0.0;
  Vec mean;
  for (std::size_t i = 0; i < v.size(); ++i) {
    total += w[i];
    mean += w[i] * v[i];
  }
  if (total > 0.0) {
    mean = mean / total;
    double var = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const Vec dv = v[i] - mean;
      var += w[i] * dot(dv, dv);
    }
    out.velocity_variance = var / total;
  }
  out.velocity_diameter = set_diameter(v, dim);
  out.spatial_diameter = set_diameter(x, dim);
  return out;
}

}  // namespace detail

/// Velocity variance about the mean, velocity diameter max|v_i - v_j| and
/// spatial diameter of an agent state (uniform weights).
inline FlockingMetrics flocking_metrics(const AgentState& s) {
  if (s.size() == 0) throw InvalidInput("flocking_metrics: need at least one agent");
  std::vector<double> w(s.size(), 1.0);
  return detail::weighted_metrics(s.positions, s.velocities, w, s.dim);
}

/// Mass-weighted version for an ensemble.
inline FlockingMetrics flocking_metrics(const Ensemble& e) {
  if (e.size() == 0) throw InvalidInput("flocking_metrics: need at least one particle");
  std::vector<Vec> x, v;
  std::vector<double> w;
  for (const auto& p : e.particles) {
    x.push_back(p.x);
    v.push_back(p.v);
    w.push_back(p.mass);
  }
  return detail::weighted_metrics(x, v, w, e.dim);
}

// ---------------------------------------------------------------------------
// Snapshot records

/// L^p norm reconstructed from particle data: (sum vol_i f_i^p)^{1/p}.
inline double particle_lp_norm(const Ensemble& e, double p) {
  if (!(p >= 1.0)) throw InvalidInput("particle_lp_norm: p must be >= 1");
  double s = 0.0;
  for (const auto& q : e.particles) s += q.phase_volume * std::pow(q.density_value, p);
  return std::pow(s, 1.0 / p);
}

/// f0_sup is ||f0||_inf of the initial ensemble; the bound ratio is
/// max f(t) / (f0_sup e^{lambda d t}).
inline SnapshotRecord snapshot_record(const Ensemble& e, std::span<const double> ps, double f0_sup) {
  SnapshotRecord r;
  r.t = e.t;
  r.total_mass = e.total_mass();
  r.support_radius = e.support_radius();
  for (double p : ps) r.lp_norms.emplace_back(p, particle_lp_norm(e, p));
  const double cap = f0_sup * std::exp(e.lambda * e.dim * e.t);
  r.max_density_bound_ratio = cap > 0.0 ? e.max_density_value() / cap : 0.0;
  if (e.size() > 0) {
    const auto m = flocking_metrics(e);
    r.velocity_variance = m.velocity_variance;
    r.spatial_diameter = m.spatial_diameter;
  }
  return r;
}

inline SnapshotRecord snapshot_record(const PhaseGrid& g, std::span<const double> ps, double f0_sup) {
  SnapshotRecord r;
  r.t = g.t;
  r.total_mass = g.mass();
  r.support_radius = g.support_radius();
  for (double p : ps) r.lp_norms.emplace_back(p, oracle_lp_norm(g, p));
  const double cap = f0_sup * std::exp(g.lambda * g.t);
  r.max_density_bound_ratio = cap > 0.0 ? g.max_value() / cap : 0.0;
  // mass-weighted velocity variance and extent of the positive cells in x
  double m = 0.0, mv = 0.0, mvv = 0.0;
  double xlo = 0.0, xhi = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < g.n_x; ++i)
    for (std::size_t j = 0; j < g.n_v; ++j) {
      const double f = g.at(i, j);
      if (f <= 0.0) continue;
      const double v = g.v_center(j);
      m += f;
      mv += f * v;
      mvv += f * v * v;
      const double x = g.x_center(i);
      xlo = any ? std::min(xlo, x) : x;
      xhi = any ? std::max(xhi, x) : x;
      any = true;
    }
  if (m > 0.0) r.velocity_variance = std::max(0.0, mvv / m - (mv / m) * (mv / m));
  r.spatial_diameter = any ? xhi - xlo : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Checks

/// Max relative drift |m(t) - m(0)| / m(0); absolute drift when m(0) == 0.
inline AssertionResult check_mass(std::span<const double> masses, double tol,
                                  std::string name = "mass_conservation") {
  if (masses.size() < 2) throw InvalidInput("check_mass: need at least two snapshots");
  const double m0 = masses.front();
  double drift = 0.0;
  for (double m : masses) drift = std::max(drift, std::abs(m - m0));
  if (m0 != 0.0) drift /= std::abs(m0);
  return {std::move(name), drift, tol, drift <= tol};
}

inline AssertionResult check_mass(std::span<const Ensemble> traj, double tol = 1e-12) {
  std::vector<double> m;
  for (const auto& e : traj) m.push_back(e.total_mass());
  return check_mass(m, tol);
}

inline AssertionResult check_mass(std::span<const PhaseGrid> traj, double tol) {
  std::vector<double> m;
  for (const auto& g : traj) m.push_back(g.mass());
  return check_mass(m, tol, "oracle_mass_conservation");
}

/// max_t M(t) <= M0 + tol.
inline AssertionResult check_support(std::span<const Ensemble> traj, double M0, double tol = 1e-9) {
  if (traj.empty()) throw InvalidInput("check_support: empty trajectory");
  double m = 0.0;
  for (const auto& e : traj) m = std::max(m, e.support_radius());
  return {"support_bound", m, M0 + tol, m <= M0 + tol};
}

/// Largest single-step increase of a series; <= tol means non-increasing.
inline AssertionResult check_non_increasing(std::span<const double> series, double tol, std::string name) {
  double worst = 0.0;
  for (std::size_t i = 1; i < series.size(); ++i) worst = std::max(worst, series[i] - series[i - 1]);
  return {std::move(name), worst, tol, worst <= tol};
}

/// Least-squares slope of y against x.
inline double fitted_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("fitted_slope: need >= 2 matching points");
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw InvalidInput("fitted_slope: all abscissae coincide");
  return sxy / sxx;
}

struct LpFit {
  double p = 1.0;
  double measured = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Fits log ||f(t)||_p against t on a linear-equation oracle run and compares
/// with lambda d (p - 1) / p (d = 1). For p = 1 the target is zero and the
/// tolerance is absolute (abs_tol_p1); otherwise relative (rel_tol).
inline std::vector<LpFit> check_lp_law(std::span<const PhaseGrid> traj, std::span<const double> ps,
                                       double rel_tol = 0.05, double abs_tol_p1 = 1e-3) {
  if (traj.size() < 2) throw InvalidInput("check_lp_law: need at least two snapshots");
  std::vector<LpFit> out;
  std::vector<double> t;
  for (const auto& g : traj) t.push_back(g.t);
  const double lambda = traj.front().lambda;
  for (double p : ps) {
    std::vector<double> y;
    for (const auto& g : traj) y.push_back(std::log(oracle_lp_norm(g, p)));
    LpFit fit;
    fit.p = p;
    fit.measured = fitted_slope(t, y);
    fit.target = lambda * (p - 1.0) / p;
    if (fit.target == 0.0) {
      fit.tolerance = abs_tol_p1;
      fit.pass = std::abs(fit.measured) <= abs_tol_p1;
    } else {
      fit.tolerance = rel_tol;
      fit.pass = std::abs(fit.measured - fit.target) <= rel_tol * std::abs(fit.target);
    }
    out.push_back(fit);
  }
  return out;
}

/// Nonlinear runs only satisfy ||f(t)||_p <= e^{lambda d (p-1) t / p} ||f0||_p.
/// Value reported is the worst ratio of the two sides.
inline AssertionResult check_lp_inequality(std::span<const Ensemble> traj, double p, double tol = 1e-12) {
  if (traj.empty()) throw InvalidInput("check_lp_inequality: empty trajectory");
  const auto& e0 = traj.front();
  const double n0 = particle_lp_norm(e0, p);
  double worst = 0.0;
  for (const auto& e : traj) {
    const double cap = std::exp(e.lambda * e.dim * (p - 1.0) * (e.t - e0.t) / p) * n0;
    if (cap > 0.0) worst = std::max(worst, particle_lp_norm(e, p) / cap);
  }
  return {"lp_inequality_p" + fmt_num(p), worst, 1.0 + tol, worst <= 1.0 + tol};
}

struct TestFunction {
  std::string name;
  PhaseFunction phi;
};

/// Compares sum_i w_i phi(x_i(t), v_i(t)) with the oracle quadrature of f(t) phi
/// at every matching time. The error is scaled by the oracle quadrature of
/// f |phi|.
inline std::vector<AssertionResult> check_pushforward(std::span<const Ensemble> particles,
                                                      std::span<const TestFunction> phis,
                                                      std::span<const PhaseGrid> oracle, double tol) {
  std::vector<AssertionResult> out;
  for (const auto& tf : phis) {
    double worst = 0.0;
    std::size_t matched = 0;
    for (const auto& e : particles) {
      auto it = std::find_if(oracle.begin(), oracle.end(),
                             [&](const PhaseGrid& g) { return std::abs(g.t - e.t) <= 1e-9; });
      if (it == oracle.end()) continue;
      ++matched;
      double sum = 0.0;
      for (const auto& p : e.particles) sum += p.mass * tf.phi(p.x[0], p.v[0]);
      const double quad = oracle_integral(*it, tf.phi);
      const double scale = oracle_integral(*it, [&](double x, double v) { return std::abs(tf.phi(x, v)); });
      const double err = scale > 0.0 ? std::abs(sum - quad) / scale : std::abs(sum - quad);
      worst = std::max(worst, err);
    }
    if (matched == 0) throw InvalidInput("check_pushforward: no snapshot times in common");
    out.push_back({"pushforward_" + tf.name, worst, tol, worst <= tol});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mean-field comparison

/// Cell-centered probe nodes on a box, n per axis.
struct ProbeGrid {
  int dim = 1;
  Vec lo, hi;
  std::size_t n = 64;

  std::size_t size() const {
    std::size_t s = 1;
    for (int k = 0; k < dim; ++k) s *= n;
    return s;
  }
  double cell_volume() const {
    double v = 1.0;
    for (int k = 0; k < dim; ++k) v *= (hi[k] - lo[k]) / static_cast<double>(n);
    return v;
  }
  Vec node(std::size_t s) const {
    Vec x;
    for (int k = dim - 1; k >= 0; --k) {
      const std::size_t i = s % n;
      s /= n;
      x[k] = lo[k] + (static_cast<double>(i) + 0.5) * (hi[k] - lo[k]) / static_cast<double>(n);
    }
    return x;
  }
};

inline double ball_volume(int dim, double r) {
  switch (dim) {
    case 1: return 2.0 * r;
    case 2: return std::numbers::pi * r * r;
    default: return 4.0 / 3.0 * std::numbers::pi * r * r * r;
  }
}

/// Agents (each of mass 1/N) against a kinetic ensemble: probe-grid quadrature
/// of |rho_A - rho_K| + |j_A - j_K|, divided by the ball volume |B_r| so that
/// the rho part of two far-apart distributions sums to their masses.
inline double meanfield_distance(const AgentState& agents, const Ensemble& kinetic,
                                 const ProbeGrid& probe, double r, unsigned threads = 1) {
  if (!(r > 0.0)) throw InvalidInput("meanfield_distance: r must be positive");
  if (agents.dim != kinetic.dim || probe.dim != kinetic.dim)
    throw InvalidInput("meanfield_distance: dimension mismatch");
  Ensemble as_ensemble;
  as_ensemble.dim = agents.dim;
  const double w = agents.size() > 0 ? 1.0 / static_cast<double>(agents.size()) : 0.0;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    PhaseParticle p;
    p.id = i;
    p.x = agents.positions[i];
    p.v = agents.velocities[i];
    p.mass = w;
    as_ensemble.particles.push_back(p);
  }
  const MomentEvaluator ma(as_ensemble, r), mk(kinetic, r);
  std::vector<double> per_node(probe.size());
  parallel_for(probe.size(), threads, [&](std::size_t s) {
    const Vec x = probe.node(s);
    const auto a = ma.at(x), k = mk.at(x);
    per_node[s] = std::abs(a.rho - k.rho) + norm(a.j - k.j);
  });
  double sum = 0.0;
  for (double v : per_node) sum += v;
  return sum * probe.cell_volume() / ball_volume(kinetic.dim, r);
}

}  // namespace kflock
