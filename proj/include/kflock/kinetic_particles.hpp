#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "kflock/errors.hpp"
#include "kflock/io.hpp"
#include "kflock/parallel.hpp"
#include "kflock/phase_core.hpp"
#include "kflock/vec.hpp"

namespace kflock {

// ---------------------------------------------------------------------------
// Initial distributions

enum class DistributionKind { box_indicator, product_gaussian_truncated, two_bump, custom_grid };

enum class SamplingKind { tensor_grid, monte_carlo };

struct SamplingSpec {
  SamplingKind kind = SamplingKind::tensor_grid;
  std::size_t n_x = 32;  // tensor grid cells per spatial axis
  std::size_t n_v = 32;  // tensor grid cells per velocity axis
  std::size_t n = 1000;  // Monte Carlo sample count
  std::uint64_t seed = 1;
};

/// One component of the two_bump mixture: weight * B((x-xc)/hx) * B((v-vc)/hv)
/// with B(z) = prod_k (1 - z_k^2)^2 on |z_k| < 1.
struct Bump {
  Vec x_center;
  Vec v_center;
  double weight = 1.0;
};

/// Describes f0(x, v) >= 0 with compact velocity support. Every kind is
/// symmetric about its centers, so the mean velocity is known in closed form.
struct InitialDistributionSpec {
  DistributionKind kind = DistributionKind::box_indicator;
  int dim = 1;
  double amplitude = 1.0;

  // box_indicator: support box; custom_grid: phase box of the value grid
  Vec x_lo{0.0, 0.0, 0.0}, x_hi{1.0, 1.0, 1.0};
  Vec v_lo{0.0, 0.0, 0.0}, v_hi{1.0, 1.0, 1.0};

  // product_gaussian_truncated, truncated at `cutoff` standard deviations per axis
  Vec x_center, v_center;
  double sigma_x = 1.0, sigma_v = 1.0, cutoff = 3.0;

  // two_bump
  std::array<Bump, 2> bumps{};
  double half_width_x = 0.5, half_width_v = 0.5;

  // custom_grid: piecewise-constant cell values, x multi-index major, v multi-index minor,
  // each multi-index row-major with grid_n cells per axis
  std::size_t grid_n_x = 1, grid_n_v = 1;
  std::vector<double> values;

  SamplingSpec sampling;
};

namespace detail {

inline double bump_profile(double z) {
  if (!(std::abs(z) < 1.0)) return 0.0;
  const double a = 1.0 - z * z;
  return a * a;
}

inline constexpr double bump_profile_integral = 16.0 / 15.0;

inline std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

// Cell index of coordinate y on [lo, hi] split into n cells, or n when outside.
inline std::size_t cell_index(double y, double lo, double hi, std::size_t n) {
  if (!(y >= lo) || !(y < hi)) return n;
  auto i = static_cast<std::size_t>((y - lo) / (hi - lo) * static_cast<double>(n));
  return std::min(i, n - 1);
}

}  // namespace detail

inline void validate(const InitialDistributionSpec& s) {
  check_dim(s.dim);
  if (!(s.amplitude >= 0.0) || !std::isfinite(s.amplitude))
    throw InvalidInput("initial distribution: amplitude must be finite and >= 0");
  auto check_box = [&](const Vec& lo, const Vec& hi, const char* what) {
    for (int k = 0; k < s.dim; ++k)
      if (!(hi[k] > lo[k]) || !std::isfinite(lo[k]) || !std::isfinite(hi[k]))
        throw InvalidInput(std::string("initial distribution: empty or non-finite ") + what);
  };
  switch (s.kind) {
    case DistributionKind::box_indicator:
      check_box(s.x_lo, s.x_hi, "spatial box");
      check_box(s.v_lo, s.v_hi, "velocity box");
      break;
    case DistributionKind::product_gaussian_truncated:
      if (!(s.sigma_x > 0.0) || !(s.sigma_v > 0.0) || !(s.cutoff > 0.0))
        throw InvalidInput("gaussian distribution: sigmas and cutoff must be positive");
      break;
    case DistributionKind::two_bump:
      if (!(s.half_width_x > 0.0) || !(s.half_width_v > 0.0))
        throw InvalidInput("two_bump distribution: half widths must be positive");
      for (const auto& b : s.bumps)
        if (!(b.weight >= 0.0)) throw InvalidInput("two_bump distribution: weights must be >= 0");
      break;
    case DistributionKind::custom_grid: {
      check_box(s.x_lo, s.x_hi, "spatial box");
      check_box(s.v_lo, s.v_hi, "velocity box");
      if (s.grid_n_x == 0 || s.grid_n_v == 0)
        throw InvalidInput("custom_grid distribution: grid sizes must be positive");
      const auto expect = detail::ipow(s.grid_n_x, s.dim) * detail::ipow(s.grid_n_v, s.dim);
      if (s.values.size() != expect)
        throw InvalidInput("custom_grid distribution: expected " + std::to_string(expect) +
                           " values, got " + std::to_string(s.values.size()));
      for (double v : s.values)
        if (!(v >= 0.0) || !std::isfinite(v))
          throw InvalidInput("custom_grid distribution: values must be finite and >= 0");
      break;
    }
  }
  if (s.sampling.kind == SamplingKind::tensor_grid && (s.sampling.n_x == 0 || s.sampling.n_v == 0))
    throw InvalidInput("tensor_grid sampling: n_x and n_v must be positive");
}

/// f0(x, v).
inline double evaluate(const InitialDistributionSpec& s, const Vec& x, const Vec& v) {
  const int d = s.dim;
  switch (s.kind) {
    case DistributionKind::box_indicator:
      for (int k = 0; k < d; ++k) {
        if (!(x[k] >= s.x_lo[k] && x[k] <= s.x_hi[k])) return 0.0;
        if (!(v[k] >= s.v_lo[k] && v[k] <= s.v_hi[k])) return 0.0;
      }
      return s.amplitude;
    case DistributionKind::product_gaussian_truncated: {
      double e = 0.0;
      for (int k = 0; k < d; ++k) {
        const double zx = (x[k] - s.x_center[k]) / s.sigma_x;
        const double zv = (v[k] - s.v_center[k]) / s.sigma_v;
        if (std::abs(zx) > s.cutoff || std::abs(zv) > s.cutoff) return 0.0;
        e += zx * zx + zv * zv;
      }
      return s.amplitude * std::exp(-0.5 * e);
    }
    case DistributionKind::two_bump: {
      double total = 0.0;
      for (const auto& b : s.bumps) {
        double p = b.weight;
        for (int k = 0; k < d && p != 0.0; ++k) {
          p *= detail::bump_profile((x[k] - b.x_center[k]) / s.half_width_x);
          p *= detail::bump_profile((v[k] - b.v_center[k]) / s.half_width_v);
        }
        total += p;
      }
      return s.amplitude * total;
    }
    case DistributionKind::custom_grid: {
      std::size_t flat = 0;
      for (int k = 0; k < d; ++k) {
        const auto i = detail::cell_index(x[k], s.x_lo[k], s.x_hi[k], s.grid_n_x);
        if (i == s.grid_n_x) return 0.0;
        flat = flat * s.grid_n_x + i;
      }
      for (int k = 0; k < d; ++k) {
        const auto i = detail::cell_index(v[k], s.v_lo[k], s.v_hi[k], s.grid_n_v);
        if (i == s.grid_n_v) return 0.0;
        flat = flat * s.grid_n_v + i;
      }
      return s.amplitude * s.values[flat];
    }
  }
  return 0.0;
}

/// Axis-aligned phase box containing supp f0.
struct PhaseBox {
  Vec x_lo, x_hi, v_lo, v_hi;
};

inline PhaseBox support_box(const InitialDistributionSpec& s) {
  PhaseBox b;
  switch (s.kind) {
    case DistributionKind::box_indicator:
    case DistributionKind::custom_grid:
      b = {s.x_lo, s.x_hi, s.v_lo, s.v_hi};
      break;
    case DistributionKind::product_gaussian_truncated: {
      const double wx = s.cutoff * s.sigma_x, wv = s.cutoff * s.sigma_v;
      for (int k = 0; k < s.dim; ++k) {
        b.x_lo[k] = s.x_center[k] - wx;
        b.x_hi[k] = s.x_center[k] + wx;
        b.v_lo[k] = s.v_center[k] - wv;
        b.v_hi[k] = s.v_center[k] + wv;
      }
      break;
    }
    case DistributionKind::two_bump: {
      for (int k = 0; k < s.dim; ++k) {
        b.x_lo[k] = std::min(s.bumps[0].x_center[k], s.bumps[1].x_center[k]) - s.half_width_x;
        b.x_hi[k] = std::max(s.bumps[0].x_center[k], s.bumps[1].x_center[k]) + s.half_width_x;
        b.v_lo[k] = std::min(s.bumps[0].v_center[k], s.bumps[1].v_center[k]) - s.half_width_v;
        b.v_hi[k] = std::max(s.bumps[0].v_center[k], s.bumps[1].v_center[k]) + s.half_width_v;
      }
      break;
    }
  }
  return b;
}

/// M0: largest |v| over the velocity support of f0.
inline double velocity_support_bound(const InitialDistributionSpec& s) {
  auto corner_norm = [&](const Vec& lo, const Vec& hi) {
    Vec c;
    for (int k = 0; k < s.dim; ++k) c[k] = std::max(std::abs(lo[k]), std::abs(hi[k]));
    return norm(c);
  };
  if (s.kind == DistributionKind::two_bump) {
    double m = 0.0;
    for (const auto& b : s.bumps) {
      if (b.weight == 0.0) continue;
      Vec c;
      for (int k = 0; k < s.dim; ++k) c[k] = std::abs(b.v_center[k]) + s.half_width_v;
      m = std::max(m, norm(c));
    }
    return s.amplitude == 0.0 ? 0.0 : m;
  }
  const auto box = support_box(s);
  return s.amplitude == 0.0 ? 0.0 : corner_norm(box.v_lo, box.v_hi);
}

/// ||f0||_1 in closed form.
inline double analytic_mass(const InitialDistributionSpec& s) {
  const int d = s.dim;
  switch (s.kind) {
    case DistributionKind::box_indicator: {
      double m = s.amplitude;
      for (int k = 0; k < d; ++k) m *= (s.x_hi[k] - s.x_lo[k]) * (s.v_hi[k] - s.v_lo[k]);
      return m;
    }
    case DistributionKind::product_gaussian_truncated: {
      const double g = std::sqrt(2.0 * std::numbers::pi) * std::erf(s.cutoff / std::numbers::sqrt2);
      return s.amplitude * std::pow(g * s.sigma_x, d) * std::pow(g * s.sigma_v, d);
    }
    case DistributionKind::two_bump: {
      const double per = std::pow(detail::bump_profile_integral * s.half_width_x, d) *
                         std::pow(detail::bump_profile_integral * s.half_width_v, d);
      return s.amplitude * (s.bumps[0].weight + s.bumps[1].weight) * per;
    }
    case DistributionKind::custom_grid: {
      double cell = 1.0;
      for (int k = 0; k < d; ++k)
        cell *= (s.x_hi[k] - s.x_lo[k]) / static_cast<double>(s.grid_n_x) *
                (s.v_hi[k] - s.v_lo[k]) / static_cast<double>(s.grid_n_v);
      double sum = 0.0;
      for (double v : s.values) sum += v;
      return s.amplitude * sum * cell;
    }
  }
  return 0.0;
}

/// Mean velocity of f0 in closed form; zero when f0 has no mass.
inline Vec analytic_mean_velocity(const InitialDistributionSpec& s) {
  switch (s.kind) {
    case DistributionKind::box_indicator:
      return 0.5 * (s.v_lo + s.v_hi);
    case DistributionKind::product_gaussian_truncated:
      return s.v_center;
    case DistributionKind::two_bump: {
      const double w = s.bumps[0].weight + s.bumps[1].weight;
      if (w == 0.0) return {};
      return (s.bumps[0].weight * s.bumps[0].v_center + s.bumps[1].weight * s.bumps[1].v_center) / w;
    }
    case DistributionKind::custom_grid: {
      const double mass = analytic_mass(s);
      if (mass == 0.0) return {};
      // cell masses share a common factor; weight velocity-cell centers by values
      Vec mean;
      double total = 0.0;
      const std::size_t nvd = detail::ipow(s.grid_n_v, s.dim);
      for (std::size_t flat = 0; flat < s.values.size(); ++flat) {
        std::size_t iv = flat % nvd;
        Vec vc;
        for (int k = s.dim - 1; k >= 0; --k) {
          const std::size_t ik = iv % s.grid_n_v;
          iv /= s.grid_n_v;
          const double h = (s.v_hi[k] - s.v_lo[k]) / static_cast<double>(s.grid_n_v);
          vc[k] = s.v_lo[k] + (static_cast<double>(ik) + 0.5) * h;
        }
        mean += s.values[flat] * vc;
        total += s.values[flat];
      }
      return mean / total;
    }
  }
  return {};
}

/// Upper bound on sup f0 (exact for every kind except overlapping bumps).
inline double sup_bound(const InitialDistributionSpec& s) {
  switch (s.kind) {
    case DistributionKind::box_indicator:
    case DistributionKind::product_gaussian_truncated:
      return s.amplitude;
    case DistributionKind::two_bump:
      return s.amplitude * (s.bumps[0].weight + s.bumps[1].weight);
    case DistributionKind::custom_grid: {
      double m = 0.0;
      for (double v : s.values) m = std::max(m, v);
      return s.amplitude * m;
    }
  }
  return 0.0;
}

/// Discretizes f0 into weighted phase particles.
///
/// tensor_grid: one particle per non-empty cell of the support box at the cell
/// center, phase_volume = cell volume, density_value = f0(center).
/// monte_carlo: rejection samples from f0 / ||f0||_1 with equal masses
/// ||f0||_1 / N and phase_volume = mass / density_value.
///
/// The ensemble's initial_support_bound is the largest sampled |v|.
inline Ensemble sample_initial(const InitialDistributionSpec& spec, double lambda, double radius) {
  validate(spec);
  if (!(lambda > 0.0)) throw InvalidInput("sample_initial: lambda must be positive");
  if (!(radius > 0.0)) throw InvalidInput("sample_initial: radius must be positive");
  const int d = spec.dim;
  Ensemble ens;
  ens.dim = d;
  ens.lambda = lambda;
  ens.radius = radius;

  const PhaseBox box = support_box(spec);
  if (spec.sampling.kind == SamplingKind::tensor_grid) {
    const std::size_t nx = spec.sampling.n_x, nv = spec.sampling.n_v;
    const std::size_t total = detail::ipow(nx, d) * detail::ipow(nv, d);
    double cell_volume = 1.0;
    Vec hx, hv;
    for (int k = 0; k < d; ++k) {
      hx[k] = (box.x_hi[k] - box.x_lo[k]) / static_cast<double>(nx);
      hv[k] = (box.v_hi[k] - box.v_lo[k]) / static_cast<double>(nv);
      cell_volume *= hx[k] * hv[k];
    }
    const std::size_t nvd = detail::ipow(nv, d);
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t ix = flat / nvd, iv = flat % nvd;
      Vec x, v;
      for (int k = d - 1; k >= 0; --k) {
        x[k] = box.x_lo[k] + (static_cast<double>(ix % nx) + 0.5) * hx[k];
        v[k] = box.v_lo[k] + (static_cast<double>(iv % nv) + 0.5) * hv[k];
        ix /= nx;
        iv /= nv;
      }
      const double f = evaluate(spec, x, v);
      if (f <= 0.0) continue;
      PhaseParticle p;
      p.id = ens.particles.size();
      p.x = x;
      p.v = v;
      p.density_value = f;
      p.phase_volume = cell_volume;
      p.mass = f * cell_volume;
      ens.particles.push_back(p);
    }
  } else {
    const double mass = analytic_mass(spec);
    const double fmax = sup_bound(spec);
    const std::size_t n = spec.sampling.n;
    if (mass > 0.0 && fmax > 0.0 && n > 0) {
      std::mt19937_64 rng(spec.sampling.seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double w = mass / static_cast<double>(n);
      ens.particles.reserve(n);
      while (ens.particles.size() < n) {
        Vec x, v;
        for (int k = 0; k < d; ++k) {
          x[k] = box.x_lo[k] + (box.x_hi[k] - box.x_lo[k]) * unit(rng);
          v[k] = box.v_lo[k] + (box.v_hi[k] - box.v_lo[k]) * unit(rng);
        }
        const double f = evaluate(spec, x, v);
        if (f <= 0.0 || unit(rng) * fmax >= f) continue;
        PhaseParticle p;
        p.id = ens.particles.size();
        p.x = x;
        p.v = v;
        p.mass = w;
        p.density_value = f;
        p.phase_volume = w / f;
        ens.particles.push_back(p);
      }
    }
  }
  ens.initial_support_bound = ens.support_radius();
  return ens;
}

// ---------------------------------------------------------------------------
// Local moments and the averaged velocity field

/// Brute-force (rho_r, j_r) at x over all particles, summed in index order.
inline LocalMoments local_moments(const Ensemble& ens, const Vec& x, double r) {
  if (!(r > 0.0)) throw InvalidInput("local_moments: r must be positive");
  LocalMoments m;
  for (const auto& p : ens.particles) {
    if (within_radius(p.x, x, r)) {
      m.rho += p.mass;
      m.j += p.mass * p.v;
    }
  }
  return m;
}

/// u = j/rho, or zero where rho == 0.
inline Vec averaged_velocity(const LocalMoments& m) {
  if (m.rho == 0.0) return {};
  return m.j / m.rho;
}

/// u^delta = j / (delta + rho).
inline Vec regularized_velocity(const LocalMoments& m, double delta) {
  if (m.rho == 0.0) return {};
  return m.j / (delta + m.rho);
}

inline Vec velocity_field(const Ensemble& ens, const Vec& x, double r) {
  return averaged_velocity(local_moments(ens, x, r));
}

inline Vec velocity_field_delta(const Ensemble& ens, const Vec& x, double r, double delta) {
  if (!(delta > 0.0)) throw InvalidInput("velocity_field_delta: delta must be positive");
  return regularized_velocity(local_moments(ens, x, r), delta);
}

/// Indexed moment evaluator for many query points against one ensemble.
/// Produces bit-identical results to local_moments.
class MomentEvaluator {
 public:
  MomentEvaluator(const Ensemble& ens, double r)
      : ens_(&ens), r_(r), index_(ens.positions(), r) {
    if (!(r > 0.0)) throw InvalidInput("MomentEvaluator: r must be positive");
  }

  LocalMoments at(const Vec& x) const {
    thread_local std::vector<std::size_t> nbrs;
    index_.query_into(x, r_, nbrs);
    LocalMoments m;
    for (auto i : nbrs) {
      const auto& p = ens_->particles[i];
      m.rho += p.mass;
      m.j += p.mass * p.v;
    }
    return m;
  }

  /// delta == 0 selects j/rho with the zero branch, delta > 0 selects j/(delta+rho).
  Vec velocity(const Vec& x, double delta) const {
    const auto m = at(x);
    return delta > 0.0 ? regularized_velocity(m, delta) : averaged_velocity(m);
  }

 private:
  const Ensemble* ens_;
  double r_;
  SpatialIndex index_;
};

// ---------------------------------------------------------------------------
// Characteristics

using FieldEvaluator = std::function<Vec(double t, const Vec& x)>;

/// Advances every particle by dt through the exact solution of
/// dX/dt = V, dV/dt = lambda (E - V) with E frozen at the particle's start
/// point. density_value grows by e^{lambda d dt} and phase_volume shrinks by the
/// reciprocal factor; mass is untouched.
inline Ensemble advance_with_field_values(const Ensemble& ens, std::span<const Vec> field_values,
                                          double dt, unsigned threads = 1) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("advance: dt must be positive");
  if (field_values.size() != ens.size()) throw InvalidInput("advance: field value count mismatch");
  const double lam = ens.lambda;
  const double decay = std::exp(-lam * dt);
  const double drift = -std::expm1(-lam * dt) / lam;
  const double grow = std::exp(lam * ens.dim * dt);
  const double shrink = std::exp(-lam * ens.dim * dt);
  Ensemble next = ens;
  parallel_for(ens.size(), threads, [&](std::size_t i) {
    const Vec& e = field_values[i];
    if (!is_finite(e)) {
      const auto& p = ens.particles[i];
      throw PropagationError(i, "non-finite field value for particle " + std::to_string(p.id) +
                                    " at x=" + fmt_num(p.x[0]) + "," + fmt_num(p.x[1]) + "," +
                                    fmt_num(p.x[2]));
    }
    const auto& p = ens.particles[i];
    auto& q = next.particles[i];
    const Vec rel = p.v - e;
    q.x = p.x + dt * e + drift * rel;
    q.v = e + decay * rel;
    q.density_value = p.density_value * grow;
    q.phase_volume = p.phase_volume * shrink;
  });
  next.t = ens.t + dt;
  return next;
}

inline Ensemble advance_characteristics(const Ensemble& ens, const FieldEvaluator& field, double dt,
                                        unsigned threads = 1) {
  std::vector<Vec> values(ens.size());
  parallel_for(ens.size(), threads,
               [&](std::size_t i) { values[i] = field(ens.t, ens.particles[i].x); });
  return advance_with_field_values(ens, values, dt, threads);
}

// ---------------------------------------------------------------------------
// Self-consistent solver

struct SelfConsistentOptions {
  double T = 1.0;
  double dt = 0.01;
  double delta = 0.0;
  std::size_t snapshot_stride = 1;
  unsigned threads = 1;
  double support_tolerance = 1e-9;
  /// false downgrades a support-bound breach from an abort to a recorded warning
  bool abort_on_support_violation = true;
};

struct SelfConsistentRun {
  std::vector<Ensemble> snapshots;
  std::vector<std::size_t> snapshot_steps;
  /// M(t) after every step, index 0 is the initial state
  std::vector<double> support_per_step;
  std::size_t steps = 0;
  std::size_t support_warnings = 0;
};

/// Uniform step count covering [0, T]; the last step is shortened when T/dt is
/// not an integer.
inline std::vector<double> step_sizes(double T, double dt) {
  if (!(T > 0.0) || !std::isfinite(T)) throw InvalidInput("T must be positive");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("dt must be positive");
  const double ratio = T / dt;
  const double n_round = std::round(ratio);
  if (n_round >= 1.0 && std::abs(ratio - n_round) <= 1e-9 * std::max(1.0, ratio))
    return std::vector<double>(static_cast<std::size_t>(n_round), dt);
  const auto n = static_cast<std::size_t>(std::ceil(ratio));
  std::vector<double> out(n, dt);
  out.back() = T - dt * static_cast<double>(n - 1);
  return out;
}

/// Evolves the ensemble under its own averaged velocity field: every step
/// rebuilds the index, evaluates u (delta == 0) or u^delta (delta > 0) at each
/// particle, and applies one frozen-field exponential step.
inline SelfConsistentRun run_self_consistent(const Ensemble& initial, const SelfConsistentOptions& opt) {
  if (!(opt.delta >= 0.0) || !std::isfinite(opt.delta))
    throw InvalidInput("run_self_consistent: delta must be >= 0");
  if (opt.snapshot_stride == 0) throw InvalidInput("run_self_consistent: snapshot stride must be >= 1");
  const auto steps = step_sizes(opt.T, opt.dt);
  const double bound = initial.initial_support_bound + opt.support_tolerance;

  SelfConsistentRun run;
  run.steps = steps.size();
  run.snapshots.push_back(initial);
  run.snapshot_steps.push_back(0);
  run.support_per_step.push_back(initial.support_radius());

  Ensemble cur = initial;
  std::vector<Vec> field(cur.size());
  for (std::size_t s = 0; s < steps.size(); ++s) {
    {
      const MomentEvaluator moments(cur, cur.radius);
      parallel_for(cur.size(), opt.threads, [&](std::size_t i) {
        field[i] = moments.velocity(cur.particles[i].x, opt.delta);
      });
    }
    cur = advance_with_field_values(cur, field, steps[s], opt.threads);
    cur.t = (s + 1 == steps.size()) ? opt.T : opt.dt * static_cast<double>(s + 1);

    const double m = cur.support_radius();
    run.support_per_step.push_back(m);
    if (m > bound) {
      if (opt.abort_on_support_violation)
        throw InvariantViolation("support bound violated at step " + std::to_string(s + 1) +
                                 ": M(t)=" + fmt_num(m) + " > M0=" +
                                 fmt_num(initial.initial_support_bound));
      ++run.support_warnings;
    }
    if ((s + 1) % opt.snapshot_stride == 0 || s + 1 == steps.size()) {
      run.snapshots.push_back(cur);
      run.snapshot_steps.push_back(s + 1);
    }
  }
  return run;
}

/// Particle snapshot CSV: step,t,id,x0..,v0..,mass,density_value,phase_volume.
inline void write_snapshot_header(std::ostream& os, int dim) {
  os << "step,t,id";
  for (int k = 0; k < dim; ++k) os << ",x" << k;
  for (int k = 0; k < dim; ++k) os << ",v" << k;
  os << ",mass,density_value,phase_volume\n";
}

inline void write_snapshot_rows(std::ostream& os, std::size_t step, const Ensemble& ens) {
  for (const auto& p : ens.particles) {
    os << step << ',' << fmt_num(ens.t) << ',' << p.id;
    for (int k = 0; k < ens.dim; ++k) os << ',' << fmt_num(p.x[k]);
    for (int k = 0; k < ens.dim; ++k) os << ',' << fmt_num(p.v[k]);
    os << ',' << fmt_num(p.mass) << ',' << fmt_num(p.density_value) << ','
       << fmt_num(p.phase_volume) << '\n';
  }
}

}  // namespace kflock
