#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "kflock/errors.hpp"
#include "kflock/parallel.hpp"
#include "kflock/phase_core.hpp"
#include "kflock/vec.hpp"

namespace kflock {

/// Communication weight psi(s) >= 0 as a function of pair distance.
/// Either the cut-off indicator chi_r (1 for s < r, 0 otherwise) or a smooth
/// non-increasing callable, checked by sampling at construction.
class InteractionKernel {
 public:
  enum class Kind { indicator, smooth };

  static InteractionKernel indicator(double r) {
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidInput("indicator kernel: r must be positive");
    InteractionKernel k;
    k.kind_ = Kind::indicator;
    k.radius_ = r;
    k.name_ = "indicator";
    return k;
  }

  static InteractionKernel smooth(std::function<double(double)> psi, std::string name,
                                  double sample_range = 100.0, std::size_t samples = 4001) {
    if (!psi) throw InvalidInput("smooth kernel: empty callable");
    double prev = psi(0.0);
    for (std::size_t i = 0; i < samples; ++i) {
      const double s = sample_range * static_cast<double>(i) / static_cast<double>(samples - 1);
      const double val = psi(s);
      if (!(val >= 0.0) || !std::isfinite(val))
        throw InvalidInput("smooth kernel '" + name + "': negative or non-finite value at s=" +
                           std::to_string(s));
      if (val > prev) throw InvalidInput("smooth kernel '" + name + "': not non-increasing");
      prev = val;
    }
    InteractionKernel k;
    k.kind_ = Kind::smooth;
    k.psi_ = std::make_shared<std::function<double(double)>>(std::move(psi));
    k.name_ = std::move(name);
    return k;
  }

  /// psi == 1.
  static InteractionKernel constant() {
    return smooth([](double) { return 1.0; }, "constant");
  }

  /// psi(s) = (1 + s^2)^(-beta).
  static InteractionKernel power_law(double beta) {
    if (!(beta >= 0.0)) throw InvalidInput("power-law kernel: beta must be >= 0");
    return smooth([beta](double s) { return std::pow(1.0 + s * s, -beta); },
                  "power_law");
  }

  double operator()(double s) const {
    if (kind_ == Kind::indicator) return std::abs(s) < radius_ ? 1.0 : 0.0;
    return (*psi_)(s);
  }

  Kind kind() const { return kind_; }
  double radius() const { return radius_; }
  const std::string& name() const { return name_; }

 private:
  InteractionKernel() = default;

  Kind kind_ = Kind::indicator;
  double radius_ = 0.0;
  std::shared_ptr<std::function<double(double)>> psi_;
  std::string name_;
};

/// One heading-averaging update: move at constant speed along the current
/// heading, then take the full-quadrant angle of the summed neighbor direction
/// plus uniform noise in [-noise/2, noise/2]. A vanishing direction sum keeps
/// the old heading and bumps degenerate_events.
inline HeadingState vicsek_step(const HeadingState& state, double r, double noise_amplitude,
                                std::mt19937_64& rng, unsigned threads = 1) {
  state.validate();
  if (!(r > 0.0)) throw InvalidInput("vicsek_step: r must be positive");
  if (!(noise_amplitude >= 0.0) || !std::isfinite(noise_amplitude))
    throw InvalidInput("vicsek_step: noise amplitude must be >= 0");

  const std::size_t n = state.size();
  std::vector<double> noise(n, 0.0);
  if (noise_amplitude > 0.0) {
    std::uniform_real_distribution<double> dist(-0.5 * noise_amplitude, 0.5 * noise_amplitude);
    for (auto& e : noise) e = dist(rng);
  }

  const SpatialIndex index(state.positions, r);
  HeadingState next = state;
  std::vector<char> degenerate(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<std::size_t> nbrs;
    index.query_into(state.positions[i], r, nbrs);
    double sc = 0.0, ss = 0.0;
    for (auto j : nbrs) {
      sc += std::cos(state.headings[j]);
      ss += std::sin(state.headings[j]);
    }
    double heading = state.headings[i];
    if (sc == 0.0 && ss == 0.0) {
      degenerate[i] = 1;
    } else {
      heading = std::atan2(ss, sc);
    }
    next.headings[i] = wrap_angle(heading + noise[i]);
    const double th = state.headings[i];
    next.positions[i] = state.positions[i] + Vec(state.speed * std::cos(th), state.speed * std::sin(th));
  });
  for (char d : degenerate) next.degenerate_events += static_cast<std::size_t>(d);
  next.t = state.t + 1;
  return next;
}

/// Global alignment: a_i = (lambda/N) sum_j psi(|x_j - x_i|)(v_j - v_i).
inline std::vector<Vec> cs_rhs(const AgentState& state, double lambda,
                               const InteractionKernel& kernel, unsigned threads = 1) {
  if (!(lambda > 0.0)) throw InvalidInput("cs_rhs: lambda must be positive");
  const std::size_t n = state.size();
  std::vector<Vec> acc(n);
  if (n == 0) return acc;
  const double scale = lambda / static_cast<double>(n);
  parallel_for(n, threads, [&](std::size_t i) {
    Vec sum;
    const Vec& xi = state.positions[i];
    const Vec& vi = state.velocities[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double w = kernel(distance(state.positions[j], xi));
      sum += w * (state.velocities[j] - vi);
    }
    acc[i] = scale * sum;
  });
  return acc;
}

namespace detail {

// Shared body of the cut-off and normalized models restricted to the r-ball:
// a_i = (lambda / sum_j w_ij) * sum_j w_ij (v_j - v_i), summed in index order.
inline std::vector<Vec> normalized_ball_rhs(const AgentState& state, double lambda, double r,
                                            const InteractionKernel* kernel, unsigned threads) {
  const std::size_t n = state.size();
  std::vector<Vec> acc(n);
  if (n == 0) return acc;
  const SpatialIndex index(state.positions, r);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<std::size_t> nbrs;
    index.query_into(state.positions[i], r, nbrs);
    double denom = 0.0;
    Vec sum;
    for (auto j : nbrs) {
      const double w = kernel ? (*kernel)(distance(state.positions[j], state.positions[i])) : 1.0;
      denom += w;
      if (j != i) sum += w * (state.velocities[j] - state.velocities[i]);
    }
    acc[i] = (lambda / denom) * sum;
  });
  return acc;
}

}  // namespace detail

/// Cut-off model: a_i = (lambda/N_i) sum_{|x_j - x_i| < r} (v_j - v_i), where
/// N_i counts agent i itself and is therefore never zero.
inline std::vector<Vec> cutoff_cs_rhs(const AgentState& state, double lambda, double r,
                                      unsigned threads = 1) {
  if (!(lambda > 0.0)) throw InvalidInput("cutoff_cs_rhs: lambda must be positive");
  if (!(r > 0.0)) throw InvalidInput("cutoff_cs_rhs: r must be positive");
  return detail::normalized_ball_rhs(state, lambda, r, nullptr, threads);
}

/// Normalized model: a_i = lambda / (sum_j psi_ij) * sum_j psi_ij (v_j - v_i).
/// With the indicator kernel this evaluates exactly like cutoff_cs_rhs.
inline std::vector<Vec> mt_rhs(const AgentState& state, double lambda,
                               const InteractionKernel& kernel, unsigned threads = 1) {
  if (!(lambda > 0.0)) throw InvalidInput("mt_rhs: lambda must be positive");
  if (!(kernel(0.0) > 0.0)) throw InvalidInput("mt_rhs: kernel must satisfy psi(0) > 0");
  if (kernel.kind() == InteractionKernel::Kind::indicator)
    return detail::normalized_ball_rhs(state, lambda, kernel.radius(), nullptr, threads);

  const std::size_t n = state.size();
  std::vector<Vec> acc(n);
  parallel_for(n, threads, [&](std::size_t i) {
    double denom = 0.0;
    Vec sum;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = kernel(distance(state.positions[j], state.positions[i]));
      denom += w;
      if (j != i) sum += w * (state.velocities[j] - state.velocities[i]);
    }
    acc[i] = (lambda / denom) * sum;
  });
  return acc;
}

using AgentRhs = std::function<std::vector<Vec>(const AgentState&)>;

enum class AgentScheme {
  explicit_euler,
  rk4,
  /// Exact step for relaxation models a_i = rate * (target_i - v_i) with the
  /// target frozen over the step; requires the relaxation rate.
  exponential,
};

namespace detail {

inline AgentState shifted(const AgentState& s, const std::vector<Vec>& dx, const std::vector<Vec>& dv,
                          double h) {
  AgentState out = s;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.positions[i] += h * dx[i];
    out.velocities[i] += h * dv[i];
  }
  return out;
}

}  // namespace detail

/// Advances positions with velocities and velocities with rhs over one step dt.
inline AgentState integrate_agents(const AgentState& state, const AgentRhs& rhs, double dt,
                                   AgentScheme scheme, double relaxation_rate = 0.0) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("integrate_agents: dt must be positive");
  const std::size_t n = state.size();
  AgentState next = state;

  switch (scheme) {
    case AgentScheme::explicit_euler: {
      const auto a = rhs(state);
      for (std::size_t i = 0; i < n; ++i) {
        next.positions[i] += dt * state.velocities[i];
        next.velocities[i] += dt * a[i];
      }
      break;
    }
    case AgentScheme::rk4: {
      const auto& v1 = state.velocities;
      const auto a1 = rhs(state);
      const auto s2 = detail::shifted(state, v1, a1, 0.5 * dt);
      const auto a2 = rhs(s2);
      const auto s3 = detail::shifted(state, s2.velocities, a2, 0.5 * dt);
      const auto a3 = rhs(s3);
      const auto s4 = detail::shifted(state, s3.velocities, a3, dt);
      const auto a4 = rhs(s4);
      for (std::size_t i = 0; i < n; ++i) {
        next.positions[i] += (dt / 6.0) * (v1[i] + 2.0 * s2.velocities[i] + 2.0 * s3.velocities[i] +
                                           s4.velocities[i]);
        next.velocities[i] += (dt / 6.0) * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
      }
      break;
    }
    case AgentScheme::exponential: {
      if (!(relaxation_rate > 0.0))
        throw InvalidInput("integrate_agents: exponential scheme needs a positive relaxation rate");
      const auto a = rhs(state);
      const double decay = std::exp(-relaxation_rate * dt);
      const double drift = -std::expm1(-relaxation_rate * dt) / relaxation_rate;
      for (std::size_t i = 0; i < n; ++i) {
        const Vec target = state.velocities[i] + a[i] / relaxation_rate;
        const Vec rel = state.velocities[i] - target;
        next.positions[i] += dt * target + drift * rel;
        next.velocities[i] = target + decay * rel;
      }
      break;
    }
  }

  next.t = state.t + dt;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_finite(next.positions[i]) || !is_finite(next.velocities[i])) {
      const auto step = static_cast<std::size_t>(std::llround(state.t / dt));
      throw IntegrationBlowup(step, "integrate_agents: non-finite state for agent " +
                                        std::to_string(i) + " at step " + std::to_string(step));
    }
  }
  return next;
}

}  // namespace kflock
