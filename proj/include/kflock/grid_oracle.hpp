#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "kflock/errors.hpp"
#include "kflock/fixed_point.hpp"
#include "kflock/io.hpp"
#include "kflock/parallel.hpp"
#include "kflock/phase_core.hpp"

// Semi-Lagrangian solver for the linear kinetic equation in one space and one
// velocity dimension. It shares no stepping code with the particle solver and
// serves as the reference for the L^p, sup-bound and pushforward checks.

namespace kflock {

/// Cell-centered values of f on [x_min, x_max] x [-v_max, v_max], x-major.
struct PhaseGrid {
  std::size_t n_x = 0, n_v = 0;
  double x_min = 0.0, x_max = 1.0, v_max = 1.0;
  double t = 0.0;
  double lambda = 1.0;
  std::vector<double> f;

  double dx() const { return (x_max - x_min) / static_cast<double>(n_x); }
  double dv() const { return 2.0 * v_max / static_cast<double>(n_v); }
  double x_center(std::size_t i) const { return x_min + (static_cast<double>(i) + 0.5) * dx(); }
  double v_center(std::size_t j) const { return -v_max + (static_cast<double>(j) + 0.5) * dv(); }
  double& at(std::size_t i, std::size_t j) { return f[i * n_v + j]; }
  double at(std::size_t i, std::size_t j) const { return f[i * n_v + j]; }

  /// Bilinear interpolation through cell centers, zero beyond the grid.
  double interpolate(double x, double v) const {
    const double u = (x - x_min) / dx() - 0.5;
    const double w = (v + v_max) / dv() - 0.5;
    if (!(u > -1.0 && u < static_cast<double>(n_x)) || !(w > -1.0 && w < static_cast<double>(n_v)))
      return 0.0;
    const double fu = std::floor(u), fw = std::floor(w);
    const double a = u - fu, b = w - fw;
    const auto i0 = static_cast<long long>(fu);
    const auto j0 = static_cast<long long>(fw);
    auto val = [&](long long i, long long j) {
      if (i < 0 || j < 0 || i >= static_cast<long long>(n_x) || j >= static_cast<long long>(n_v)) return 0.0;
      return at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    };
    return (1.0 - a) * ((1.0 - b) * val(i0, j0) + b * val(i0, j0 + 1)) +
           a * ((1.0 - b) * val(i0 + 1, j0) + b * val(i0 + 1, j0 + 1));
  }

  double mass() const {
    double s = 0.0;
    for (double v : f) s += v;
    return s * dx() * dv();
  }

  double max_value() const {
    double m = 0.0;
    for (double v : f) m = std::max(m, v);
    return m;
  }

  /// Largest |v| among cells with positive value.
  double support_radius() const {
    double m = 0.0;
    for (std::size_t i = 0; i < n_x; ++i)
      for (std::size_t j = 0; j < n_v; ++j)
        if (at(i, j) > 0.0) m = std::max(m, std::abs(v_center(j)));
    return m;
  }
};

using PhaseFunction = std::function<double(double x, double v)>;
using Field1D = std::function<double(double t, double x)>;

inline PhaseGrid make_phase_grid(std::size_t n_x, std::size_t n_v, double x_min, double x_max,
                                 double v_max, double lambda, const PhaseFunction& f0) {
  if (n_x == 0 || n_v == 0) throw InvalidInput("phase grid: cell counts must be positive");
  if (!(x_max > x_min)) throw InvalidInput("phase grid: empty x range");
  if (!(v_max > 0.0)) throw InvalidInput("phase grid: v_max must be positive");
  if (!(lambda >= 0.0)) throw InvalidInput("phase grid: lambda must be >= 0");
  PhaseGrid g;
  g.n_x = n_x;
  g.n_v = n_v;
  g.x_min = x_min;
  g.x_max = x_max;
  g.v_max = v_max;
  g.lambda = lambda;
  g.f.assign(n_x * n_v, 0.0);
  for (std::size_t i = 0; i < n_x; ++i)
    for (std::size_t j = 0; j < n_v; ++j) {
      const double val = f0(g.x_center(i), g.v_center(j));
      if (!(val >= 0.0) || !std::isfinite(val)) throw InvalidInput("phase grid: f0 must be finite and >= 0");
      g.at(i, j) = val;
    }
  return g;
}

/// Foot (X0, V0) of the frozen-field characteristic that reaches (x, v) after dt.
/// Inverts X1 = X0 + E dt + (V0 - E)(1 - e^{-lambda dt})/lambda,
/// V1 = E + (V0 - E) e^{-lambda dt}, with E = E(t, X0) resolved by fixed-point
/// iteration on the foot position, so this is the exact inverse of one particle step.
struct CharacteristicFoot {
  double x = 0.0;
  double v = 0.0;
};

inline CharacteristicFoot backward_foot(double x, double v, double t, double dt, double lambda,
                                        const Field1D& E, int max_iterations = 8) {
  if (lambda == 0.0) return {x - v * dt, v};
  const double growth = std::exp(lambda * dt);
  const double reach = std::expm1(lambda * dt) / lambda;
  double e = E(t, x);
  CharacteristicFoot foot;
  for (int it = 0;; ++it) {
    foot.v = e + (v - e) * growth;
    const double fx = x - e * dt - (v - e) * reach;
    const bool settled = it > 0 && fx == foot.x;
    foot.x = fx;
    if (settled || it == max_iterations) break;
    e = E(t, foot.x);
  }
  return foot;
}

/// f(t+dt, x, v) = e^{lambda dt} f(t, X0, V0) at every node, d = 1.
inline PhaseGrid semi_lagrangian_step(const PhaseGrid& grid, const Field1D& E, double dt,
                                      unsigned threads = 1) {
  if (!(dt > 0.0)) throw InvalidInput("semi_lagrangian_step: dt must be positive");
  PhaseGrid next = grid;
  const double gain = std::exp(grid.lambda * dt);
  const double wx = grid.x_max - grid.x_min;
  const double safe_x_lo = grid.x_min - wx, safe_x_hi = grid.x_max + wx;
  const double safe_v = 3.0 * grid.v_max;
  parallel_for(grid.n_x, threads, [&](std::size_t i) {
    const double x = grid.x_center(i);
    for (std::size_t j = 0; j < grid.n_v; ++j) {
      const double v = grid.v_center(j);
      const auto foot = backward_foot(x, v, grid.t, dt, grid.lambda, E);
      if (!(foot.x >= safe_x_lo && foot.x <= safe_x_hi && std::abs(foot.v) <= safe_v))
        throw ResolutionError("semi_lagrangian_step: characteristic foot (" + fmt_num(foot.x) + ", " +
                              fmt_num(foot.v) + ") of node (" + fmt_num(x) + ", " + fmt_num(v) +
                              ") left the safety box");
      next.at(i, j) = gain * grid.interpolate(foot.x, foot.v);
    }
  });
  next.t = grid.t + dt;
  return next;
}

/// (sum f^p dx dv)^{1/p}.
inline double oracle_lp_norm(const PhaseGrid& g, double p) {
  if (!(p >= 1.0)) throw InvalidInput("oracle_lp_norm: p must be >= 1");
  double s = 0.0;
  for (double v : g.f) s += std::pow(v, p);
  return std::pow(s * g.dx() * g.dv(), 1.0 / p);
}

/// Quadrature of f * phi over cell centers.
inline double oracle_integral(const PhaseGrid& g, const PhaseFunction& phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.n_x; ++i)
    for (std::size_t j = 0; j < g.n_v; ++j) s += g.at(i, j) * phi(g.x_center(i), g.v_center(j));
  return s * g.dx() * g.dv();
}

/// (rho_r, j_r) at x, with each x-cell weighted by its exact overlap with (x - r, x + r).
inline LocalMoments oracle_moments(const PhaseGrid& g, double x, double r) {
  LocalMoments m;
  const double h = g.dx();
  for (std::size_t i = 0; i < g.n_x; ++i) {
    const double a = g.x_min + static_cast<double>(i) * h;
    const double overlap = std::min(a + h, x + r) - std::max(a, x - r);
    if (overlap <= 0.0) continue;
    double col_rho = 0.0, col_j = 0.0;
    for (std::size_t j = 0; j < g.n_v; ++j) {
      col_rho += g.at(i, j);
      col_j += g.at(i, j) * g.v_center(j);
    }
    m.rho += overlap * g.dv() * col_rho;
    m.j[0] += overlap * g.dv() * col_j;
  }
  return m;
}

/// Grid counterpart of apply_F for d = 1: solve the linear equation driven by E
/// on the phase grid and evaluate j_r / (delta + rho_r) at the field nodes.
inline FieldGrid oracle_apply_F(const FieldGrid& E, const PhaseGrid& grid0, double r, double delta,
                                std::size_t substeps = 1, unsigned threads = 1) {
  if (E.dim() != 1) throw InvalidInput("oracle_apply_F: only d = 1 is supported");
  if (substeps == 0) throw InvalidInput("oracle_apply_F: substeps must be >= 1");
  FieldGrid out = E.zeros_like();
  PhaseGrid g = grid0;
  g.t = 0.0;
  const double h = E.dt() / static_cast<double>(substeps);
  const Field1D field = [&E](double t, double x) { return E.evaluate(t, Vec(x))[0]; };
  for (std::size_t k = 0; k < E.n_times(); ++k) {
    for (std::size_t s = 0; s < E.n_space(); ++s) {
      const auto m = oracle_moments(g, E.node(s)[0], r);
      out.at(k, s) = Vec(m.j[0] / (delta + m.rho));
    }
    if (k + 1 == E.n_times()) break;
    for (std::size_t sub = 0; sub < substeps; ++sub) {
      g.t = E.time(k) + h * static_cast<double>(sub);
      g = semi_lagrangian_step(g, field, h, threads);
    }
  }
  return out;
}

/// Grid snapshot CSV rows: t,x,v,f, x-major then v.
inline void write_grid_header(std::ostream& os) { os << "t,x,v,f\n"; }

inline void write_grid_rows(std::ostream& os, const PhaseGrid& g) {
  const std::string t = fmt_num(g.t);
  for (std::size_t i = 0; i < g.n_x; ++i)
    for (std::size_t j = 0; j < g.n_v; ++j)
      os << t << ',' << fmt_num(g.x_center(i)) << ',' << fmt_num(g.v_center(j)) << ','
         << fmt_num(g.at(i, j)) << '\n';
}

}  // namespace kflock
