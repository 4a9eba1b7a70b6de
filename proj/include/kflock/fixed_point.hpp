#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "kflock/errors.hpp"
#include "kflock/io.hpp"
#include "kflock/kinetic_particles.hpp"
#include "kflock/parallel.hpp"
#include "kflock/phase_core.hpp"
#include "kflock/vec.hpp"

namespace kflock {

/// Space-time sampled velocity field on a uniform grid: K+1 time nodes on [0, T]
/// and n nodes per spatial axis on [lo, hi]. Between nodes the field is
/// multilinear in (t, x); outside the box coordinates are clamped to the box.
/// Both operations are convex combinations of node values, so the sup bound of
/// the nodes holds everywhere.
class FieldGrid {
 public:
  FieldGrid() = default;

  FieldGrid(int dim, double T, std::size_t time_intervals, const Vec& lo, const Vec& hi,
            std::size_t nodes_per_axis, double bound)
      : dim_(dim), T_(T), K_(time_intervals), lo_(lo), hi_(hi), n_(nodes_per_axis), bound_(bound) {
    check_dim(dim);
    if (!(T > 0.0)) throw InvalidInput("FieldGrid: T must be positive");
    if (time_intervals == 0) throw InvalidInput("FieldGrid: need at least one time interval");
    if (nodes_per_axis < 2) throw InvalidInput("FieldGrid: need at least two nodes per axis");
    if (!(bound >= 0.0)) throw InvalidInput("FieldGrid: bound must be >= 0");
    for (int k = 0; k < dim; ++k)
      if (!(hi[k] > lo[k])) throw InvalidInput("FieldGrid: empty spatial box");
    n_space_ = 1;
    for (int k = 0; k < dim; ++k) n_space_ *= n_;
    values_.assign((K_ + 1) * n_space_, Vec{});
  }

  int dim() const { return dim_; }
  double T() const { return T_; }
  std::size_t time_intervals() const { return K_; }
  std::size_t n_times() const { return K_ + 1; }
  std::size_t nodes_per_axis() const { return n_; }
  std::size_t n_space() const { return n_space_; }
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }
  double bound() const { return bound_; }
  double dt() const { return T_ / static_cast<double>(K_); }
  double spacing(int axis) const { return (hi_[axis] - lo_[axis]) / static_cast<double>(n_ - 1); }

  double time(std::size_t k) const { return k == K_ ? T_ : dt() * static_cast<double>(k); }

  Vec node(std::size_t s) const {
    Vec x;
    for (int k = dim_ - 1; k >= 0; --k) {
      const std::size_t i = s % n_;
      s /= n_;
      x[k] = i + 1 == n_ ? hi_[k] : lo_[k] + spacing(k) * static_cast<double>(i);
    }
    return x;
  }

  Vec& at(std::size_t k, std::size_t s) { return values_[k * n_space_ + s]; }
  const Vec& at(std::size_t k, std::size_t s) const { return values_[k * n_space_ + s]; }

  const std::vector<Vec>& values() const { return values_; }
  std::vector<Vec>& values() { return values_; }

  double sup_norm() const {
    double m = 0.0;
    for (const auto& v : values_) m = std::max(m, norm(v));
    return m;
  }

  /// Spatial multilinear value at time node k, collapsed one axis at a time
  /// with a + t (b - a) so constant data interpolates exactly.
  Vec evaluate_at_node_time(std::size_t k, const Vec& x) const {
    std::array<std::size_t, 3> i0{};
    std::array<double, 3> frac{};
    for (int a = 0; a < dim_; ++a) {
      const double u = std::clamp((x[a] - lo_[a]) / spacing(a), 0.0, static_cast<double>(n_ - 1));
      const double fl = std::min(std::floor(u), static_cast<double>(n_ - 2));
      i0[a] = static_cast<std::size_t>(fl);
      frac[a] = u - fl;
    }
    const std::size_t corners = std::size_t{1} << dim_;
    std::array<Vec, 8> c{};
    for (std::size_t m = 0; m < corners; ++m) {
      std::size_t s = 0;
      for (int a = 0; a < dim_; ++a) s = s * n_ + i0[a] + ((m >> a) & 1u);
      c[m] = at(k, s);
    }
    for (int a = 0, width = static_cast<int>(corners); a < dim_; ++a, width /= 2) {
      // corner bit a is the lowest remaining bit after previous collapses
      for (int m = 0; m < width / 2; ++m) c[m] = lerp(c[2 * m], c[2 * m + 1], frac[a]);
    }
    return c[0];
  }

  /// Space-time multilinear value, clamped to [0, T] x box.
  Vec evaluate(double t, const Vec& x) const {
    const double u = std::clamp(t / dt(), 0.0, static_cast<double>(K_));
    const double fl = std::min(std::floor(u), static_cast<double>(K_ - 1));
    const auto k = static_cast<std::size_t>(fl);
    const double frac = u - fl;
    const Vec a = evaluate_at_node_time(k, x);
    if (frac == 0.0) return a;
    return lerp(a, evaluate_at_node_time(k + 1, x), frac);
  }

  /// Same geometry, values zeroed.
  FieldGrid zeros_like() const {
    FieldGrid g = *this;
    std::fill(g.values_.begin(), g.values_.end(), Vec{});
    return g;
  }

 private:
  static Vec lerp(const Vec& a, const Vec& b, double t) {
    return t == 0.0 ? a : a + t * (b - a);
  }

  int dim_ = 1;
  double T_ = 1.0;
  std::size_t K_ = 1;
  Vec lo_, hi_;
  std::size_t n_ = 2;
  std::size_t n_space_ = 0;
  double bound_ = 0.0;
  std::vector<Vec> values_;
};

/// Discrete sup norm over all nodes of a - b.
inline double sup_distance(const FieldGrid& a, const FieldGrid& b) {
  if (a.values().size() != b.values().size()) throw InvalidInput("sup_distance: grid mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, norm(a.values()[i] - b.values()[i]));
  return m;
}

struct ApplyOptions {
  /// frozen-field steps per time interval of the grid
  std::size_t substeps = 1;
  unsigned threads = 1;
};

namespace detail {

inline double bound_slack(double bound) { return 1e-12 * std::max(1.0, bound); }

}  // namespace detail

/// The map E -> F[E]: transport f0 along the characteristics of the linear
/// equation driven by E, then evaluate j_r / (delta + rho_r) of the transported
/// density at every node of E's grid.
inline FieldGrid apply_F(const FieldGrid& E, const Ensemble& f0, double lambda, double r, double delta,
                         const ApplyOptions& opt = {}) {
  if (!(delta > 0.0)) throw InvalidInput("apply_F: delta must be positive");
  if (!(lambda > 0.0)) throw InvalidInput("apply_F: lambda must be positive");
  if (!(r > 0.0)) throw InvalidInput("apply_F: r must be positive");
  if (opt.substeps == 0) throw InvalidInput("apply_F: substeps must be >= 1");
  if (E.dim() != f0.dim) throw InvalidInput("apply_F: dimension mismatch");
  const double e_sup = E.sup_norm();
  if (e_sup > E.bound() + detail::bound_slack(E.bound()))
    throw InvalidInput("apply_F: input field sup " + fmt_num(e_sup) + " exceeds bound " +
                       fmt_num(E.bound()));

  FieldGrid out = E.zeros_like();
  Ensemble g = f0;
  g.lambda = lambda;
  g.radius = r;
  g.t = 0.0;
  const double h = E.dt() / static_cast<double>(opt.substeps);
  std::vector<Vec> values(g.size());
  for (std::size_t k = 0; k < E.n_times(); ++k) {
    {
      const MomentEvaluator moments(g, r);
      parallel_for(E.n_space(), opt.threads, [&](std::size_t s) {
        out.at(k, s) = regularized_velocity(moments.at(E.node(s)), delta);
      });
    }
    if (k + 1 == E.n_times()) break;
    for (std::size_t sub = 0; sub < opt.substeps; ++sub) {
      const double t = E.time(k) + h * static_cast<double>(sub);
      parallel_for(g.size(), opt.threads,
                   [&](std::size_t i) { values[i] = E.evaluate(t, g.particles[i].x); });
      g = advance_with_field_values(g, values, h, opt.threads);
    }
  }
  const double out_sup = out.sup_norm();
  if (out_sup > E.bound() + detail::bound_slack(E.bound()))
    throw InvariantViolation("apply_F: output sup " + fmt_num(out_sup) + " exceeds bound " +
                             fmt_num(E.bound()));
  return out;
}

/// Grid geometry for fixed-point runs: the initial spatial support inflated by
/// M0 * T on each side, so no characteristic leaves the box on [0, T].
inline FieldGrid field_grid_for(const Ensemble& f0, double T, std::size_t time_intervals,
                                std::size_t nodes_per_axis) {
  Vec lo, hi;
  const double pad = f0.initial_support_bound * T;
  for (int k = 0; k < f0.dim; ++k) {
    double a = 0.0, b = 0.0;
    if (!f0.particles.empty()) {
      a = b = f0.particles.front().x[k];
      for (const auto& p : f0.particles) {
        a = std::min(a, p.x[k]);
        b = std::max(b, p.x[k]);
      }
    }
    lo[k] = a - pad;
    hi[k] = b + pad;
    if (!(hi[k] - lo[k] > 1e-9)) {
      lo[k] -= 0.5;
      hi[k] += 0.5;
    }
  }
  return FieldGrid(f0.dim, T, time_intervals, lo, hi, nodes_per_axis, f0.initial_support_bound);
}

struct PicardConfig {
  double lambda = 1.0;
  double r = 0.5;
  double delta = 0.1;
  double T = 1.0;
  std::size_t time_intervals = 20;
  std::size_t nodes_per_axis = 33;
  double tol = 1e-8;
  std::size_t max_iter = 50;
  /// E_{n+1} = (1 - damping) E_n + damping F[E_n]
  double damping = 1.0;
  ApplyOptions apply;
};

struct PicardResult {
  FieldGrid field;
  std::vector<double> residuals;
  std::vector<double> sup_norms;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Fixed-point iteration E <- (1 - theta) E + theta F[E] from E = 0. Stops once
/// the sup-node change drops below tol; reports non-convergence otherwise.
/// Every iterate is checked against the bound M0.
inline PicardResult picard_solve(const Ensemble& f0, const PicardConfig& cfg,
                                 std::optional<FieldGrid> geometry = std::nullopt) {
  if (!(cfg.delta > 0.0)) throw InvalidInput("picard_solve: delta must be positive");
  if (!(cfg.tol > 0.0)) throw InvalidInput("picard_solve: tol must be positive");
  if (cfg.max_iter < 1) throw InvalidInput("picard_solve: max_iter must be >= 1");
  if (!(cfg.damping > 0.0 && cfg.damping <= 1.0))
    throw InvalidInput("picard_solve: damping must lie in (0, 1]");

  FieldGrid E = geometry ? geometry->zeros_like()
                         : field_grid_for(f0, cfg.T, cfg.time_intervals, cfg.nodes_per_axis);
  PicardResult res;
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    const FieldGrid FE = apply_F(E, f0, cfg.lambda, cfg.r, cfg.delta, cfg.apply);
    FieldGrid next = FE;
    if (cfg.damping < 1.0) {
      for (std::size_t i = 0; i < next.values().size(); ++i)
        next.values()[i] = (1.0 - cfg.damping) * E.values()[i] + cfg.damping * FE.values()[i];
    }
    const double sup = next.sup_norm();
    if (sup > E.bound() + detail::bound_slack(E.bound()))
      throw InvariantViolation("picard_solve: iterate " + std::to_string(it) + " sup " + fmt_num(sup) +
                               " exceeds M0=" + fmt_num(E.bound()));
    const double resid = sup_distance(next, E);
    res.residuals.push_back(resid);
    res.sup_norms.push_back(sup);
    res.iterations = it;
    E = std::move(next);
    if (resid < cfg.tol) {
      res.converged = true;
      break;
    }
  }
  res.field = std::move(E);
  return res;
}

struct LipschitzModuli {
  double spatial = 0.0;
  double temporal = 0.0;
};

/// Largest sampled difference quotients |dE|/|dx| at fixed t and |dE|/|dt| at
/// fixed x. Each pair is anchored at a grid node with its partner at most one
/// spacing (or one time interval) away, which is where a piecewise multilinear
/// field attains its slopes.
inline LipschitzModuli lipschitz_modulus(const FieldGrid& field, std::size_t sample_pairs,
                                         std::mt19937_64& rng) {
  LipschitzModuli out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int d = field.dim();
  auto pick = [&](std::size_t n) { return std::min(static_cast<std::size_t>(unit(rng) * static_cast<double>(n)), n - 1); };
  for (std::size_t s = 0; s < sample_pairs; ++s) {
    const std::size_t k = pick(field.n_times());
    const Vec x1 = field.node(pick(field.n_space()));
    Vec x2 = x1;
    for (int a = 0; a < d; ++a)
      x2[a] = std::clamp(x1[a] + field.spacing(a) * (2.0 * unit(rng) - 1.0), field.lo()[a], field.hi()[a]);
    const double dx = distance(x1, x2);
    if (dx > 0.0) {
      const double q = distance(field.evaluate_at_node_time(k, x1), field.evaluate_at_node_time(k, x2)) / dx;
      out.spatial = std::max(out.spatial, q);
    }

    const Vec x = field.node(pick(field.n_space()));
    const std::size_t kt = pick(field.time_intervals());
    const double t1 = field.time(kt);
    const double t2 = t1 + field.dt() * unit(rng);
    if (t2 > t1) {
      const double q = distance(field.evaluate(t1, x), field.evaluate(t2, x)) / (t2 - t1);
      out.temporal = std::max(out.temporal, q);
    }
  }
  return out;
}

/// Field CSV: k,t,x0..,E0.. one row per (time node, spatial node), time-major.
inline void write_field_csv(std::ostream& os, const FieldGrid& f) {
  os << "k,t";
  for (int k = 0; k < f.dim(); ++k) os << ",x" << k;
  for (int k = 0; k < f.dim(); ++k) os << ",E" << k;
  os << '\n';
  for (std::size_t k = 0; k < f.n_times(); ++k) {
    for (std::size_t s = 0; s < f.n_space(); ++s) {
      const Vec x = f.node(s);
      os << k << ',' << fmt_num(f.time(k));
      for (int a = 0; a < f.dim(); ++a) os << ',' << fmt_num(x[a]);
      for (int a = 0; a < f.dim(); ++a) os << ',' << fmt_num(f.at(k, s)[a]);
      os << '\n';
    }
  }
}

}  // namespace kflock
