#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "kflock/grid_oracle.hpp"

using namespace kflock;

namespace {

double gaussian_bump(double x, double v) { return std::exp(-(x * x) / (2 * 0.09) - (v * v) / (2 * 0.04)); }

// exact solution of the linear equation with E = 0:
// f(t, x, v) = e^{lambda t} f0(x - v (e^{lambda t} - 1)/lambda, v e^{lambda t})
double exact_zero_field(double t, double lambda, double x, double v) {
  const double g = std::exp(lambda * t);
  return g * gaussian_bump(x - v * (g - 1.0) / lambda, v * g);
}

PhaseGrid run_zero_field(std::size_t n, double T, double dt, double lambda) {
  auto g = make_phase_grid(n, n, -2.0, 2.0, 1.0, lambda, gaussian_bump);
  const Field1D zero = [](double, double) { return 0.0; };
  const int steps = static_cast<int>(std::lround(T / dt));
  for (int s = 0; s < steps; ++s) g = semi_lagrangian_step(g, zero, dt);
  return g;
}

double l1_error(const PhaseGrid& g, double lambda) {
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < g.n_x; ++i)
    for (std::size_t j = 0; j < g.n_v; ++j) {
      const double e = exact_zero_field(g.t, lambda, g.x_center(i), g.v_center(j));
      err += std::abs(g.at(i, j) - e);
      ref += e;
    }
  return err / ref;
}

}  // namespace

TEST(PhaseGrid, Geometry) {
  const auto g = make_phase_grid(4, 2, 0.0, 1.0, 1.0, 1.0, [](double, double) { return 1.0; });
  EXPECT_DOUBLE_EQ(g.dx(), 0.25);
  EXPECT_DOUBLE_EQ(g.dv(), 1.0);
  EXPECT_DOUBLE_EQ(g.x_center(0), 0.125);
  EXPECT_DOUBLE_EQ(g.v_center(1), 0.5);
  EXPECT_DOUBLE_EQ(g.mass(), 2.0);
  EXPECT_THROW(make_phase_grid(0, 2, 0.0, 1.0, 1.0, 1.0, [](double, double) { return 1.0; }), InvalidInput);
  EXPECT_THROW(make_phase_grid(2, 2, 0.0, 1.0, 1.0, 1.0, [](double, double) { return -1.0; }), InvalidInput);
  EXPECT_THROW(make_phase_grid(2, 2, 0.0, 1.0, 1.0, -1.0, [](double, double) { return 1.0; }), InvalidInput);
}

TEST(PhaseGrid, InterpolationReproducesBilinearAndVanishesOutside) {
  auto g = make_phase_grid(8, 8, -1.0, 1.0, 1.0, 1.0, [](double x, double v) { return 6.0 + x + 3.0 * v + x * v; });
  const double x = 0.1, v = -0.3;
  EXPECT_NEAR(g.interpolate(x, v), 6.0 + x + 3.0 * v + x * v, 1e-14);
  EXPECT_EQ(g.interpolate(5.0, 0.0), 0.0);
  EXPECT_EQ(g.interpolate(0.0, -5.0), 0.0);
}

TEST(SemiLagrangian, PureTransportTranslatesBox) {
  // v centers -1.5, -0.5, 0.5, 1.5 and dx = 0.5, dt = 1: every row shifts by whole cells
  const auto box = [](double x, double) { return (x > -0.5 && x < 0.5) ? 1.0 : 0.0; };
  auto g = make_phase_grid(40, 4, -10.0, 10.0, 2.0, 0.0, box);
  const Field1D zero = [](double, double) { return 0.0; };
  const auto next = semi_lagrangian_step(g, zero, 1.0);
  EXPECT_EQ(next.max_value(), 1.0);
  for (std::size_t i = 0; i < g.n_x; ++i)
    for (std::size_t j = 0; j < g.n_v; ++j)
      EXPECT_EQ(next.at(i, j), box(g.x_center(i) - g.v_center(j), 0.0));
  EXPECT_DOUBLE_EQ(next.mass(), g.mass());
}

TEST(SemiLagrangian, ZeroFieldMatchesClosedFormAndConverges) {
  const double e128 = l1_error(run_zero_field(128, 0.5, 0.05, 1.0), 1.0);
  const double e256 = l1_error(run_zero_field(256, 0.5, 0.05, 1.0), 1.0);
  EXPECT_LE(e128, 0.02);
  EXPECT_LE(e256, 0.5 * e128);
}

TEST(SemiLagrangian, MassDriftIsSecondOrder) {
  // one-step drift depends on the phase of the feet against the cells, so take the worst over many dt
  const Field1D zero = [](double, double) { return 0.0; };
  auto worst_drift = [&](std::size_t n) {
    const auto g0 = make_phase_grid(n, n, -2.0, 2.0, 1.0, 1.0, gaussian_bump);
    double worst = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const auto g = semi_lagrangian_step(g0, zero, 0.005 * k);
      worst = std::max(worst, std::abs(g.mass() - g0.mass()) / g0.mass());
    }
    return worst;
  };
  const double d64 = worst_drift(64), d128 = worst_drift(128), d256 = worst_drift(256);
  EXPECT_LE(d128, 0.3 * d64);
  EXPECT_LE(d256, 0.3 * d128);
  EXPECT_LE(d128, 1e-3);
}

TEST(BackwardFoot, InvertsForwardParticleStepForVaryingField) {
  const Field1D E = [](double t, double x) { return 0.3 * std::sin(2.0 * x) + 0.1 * t; };
  const double lambda = 2.0, dt = 0.05, t = 0.4;
  for (double x0 : {-0.8, 0.1, 0.7})
    for (double v0 : {-0.5, 0.0, 0.9}) {
      const double e = E(t, x0);
      const double x1 = x0 + e * dt + (v0 - e) * (1.0 - std::exp(-lambda * dt)) / lambda;
      const double v1 = e + (v0 - e) * std::exp(-lambda * dt);
      const auto foot = backward_foot(x1, v1, t, dt, lambda, E);
      EXPECT_NEAR(foot.x, x0, 1e-14);
      EXPECT_NEAR(foot.v, v0, 1e-14);
    }
}

TEST(SemiLagrangian, SupBoundEveryStep) {
  const Field1D field = [](double t, double x) { return 0.3 * std::sin(2.0 * x - t); };
  auto g = make_phase_grid(96, 96, -2.0, 2.0, 1.0, 1.0, gaussian_bump);
  const double f0 = g.max_value();
  for (int s = 0; s < 20; ++s) {
    g = semi_lagrangian_step(g, field, 0.05, 4);
    EXPECT_LE(g.max_value(), f0 * std::exp(g.t) * (1.0 + 1e-9));
    for (double v : g.f) EXPECT_GE(v, 0.0);
  }
}

TEST(SemiLagrangian, FootOutsideSafetyBoxThrows) {
  auto g = make_phase_grid(16, 16, -1.0, 1.0, 1.0, 1.0, gaussian_bump);
  const Field1D huge = [](double, double) { return 1e3; };
  EXPECT_THROW(semi_lagrangian_step(g, huge, 0.5), ResolutionError);
  EXPECT_THROW(semi_lagrangian_step(g, huge, 0.0), InvalidInput);
}

TEST(SemiLagrangian, ThreadsDoNotChangeResult) {
  const Field1D field = [](double t, double x) { return 0.3 * std::sin(2.0 * x - t); };
  auto a = make_phase_grid(64, 64, -2.0, 2.0, 1.0, 1.0, gaussian_bump);
  auto b = a;
  for (int s = 0; s < 5; ++s) {
    a = semi_lagrangian_step(a, field, 0.05, 1);
    b = semi_lagrangian_step(b, field, 0.05, 8);
  }
  EXPECT_EQ(a.f, b.f);
}

TEST(BackwardFoot, InvertsForwardFrozenStep) {
  const Field1D E = [](double, double) { return 0.4; };
  const double lambda = 1.3, dt = 0.2;
  const double x0 = 0.1, v0 = -0.7;
  const double x1 = x0 + 0.4 * dt + (v0 - 0.4) * (1.0 - std::exp(-lambda * dt)) / lambda;
  const double v1 = 0.4 + (v0 - 0.4) * std::exp(-lambda * dt);
  const auto foot = backward_foot(x1, v1, 0.0, dt, lambda, E);
  EXPECT_NEAR(foot.x, x0, 1e-15);
  EXPECT_NEAR(foot.v, v0, 1e-15);
}

TEST(OracleLp, UnitSquareIndicator) {
  const auto g = make_phase_grid(32, 32, 0.0, 1.0, 0.5, 1.0, [](double, double) { return 1.0; });
  EXPECT_NEAR(oracle_lp_norm(g, 1.0), 1.0, 1e-14);
  EXPECT_NEAR(oracle_lp_norm(g, 3.0), 1.0, 1e-14);
  EXPECT_THROW(oracle_lp_norm(g, 0.5), InvalidInput);
}

TEST(OracleLp, L2GrowthAtHalfTime) {
  auto ratio = [](std::size_t n) {
    const auto g0 = make_phase_grid(n, n, -2.0, 2.0, 1.0, 1.0, gaussian_bump);
    const auto g = run_zero_field(n, 0.5, 0.05, 1.0);
    return oracle_lp_norm(g, 2.0) / oracle_lp_norm(g0, 2.0);
  };
  const double target = std::exp(0.25);
  EXPECT_NEAR(target, 1.28403, 1e-5);
  const double r128 = ratio(128), r256 = ratio(256);
  EXPECT_LE(std::abs(r128 - target) / target, 0.02);
  EXPECT_LE(std::abs(r256 - target), std::abs(r128 - target));
}

TEST(OracleMoments, ExactCellOverlap) {
  // f = 1 on x in [0,1], v in [-1,1]: rho over (x-r, x+r) is 2 * overlap length
  const auto g = make_phase_grid(10, 4, 0.0, 1.0, 1.0, 1.0, [](double, double) { return 1.0; });
  const auto m = oracle_moments(g, 0.33, 0.21);
  EXPECT_NEAR(m.rho, 2.0 * 0.42, 1e-14);
  EXPECT_NEAR(m.j[0], 0.0, 1e-14);
  const auto edge = oracle_moments(g, 0.95, 0.2);
  EXPECT_NEAR(edge.rho, 2.0 * 0.25, 1e-14);
}

TEST(GridCsv, RowOrder) {
  const auto g = make_phase_grid(2, 2, 0.0, 1.0, 1.0, 1.0, [](double x, double v) { return x + v + 1.0; });
  std::ostringstream os;
  write_grid_header(os);
  write_grid_rows(os, g);
  EXPECT_EQ(os.str(),
            "t,x,v,f\n"
            "0,0.25,-0.5,0.75\n"
            "0,0.25,0.5,1.75\n"
            "0,0.75,-0.5,1.25\n"
            "0,0.75,0.5,2.25\n");
}
