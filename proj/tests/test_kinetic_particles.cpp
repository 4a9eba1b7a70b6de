#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "kflock/kinetic_particles.hpp"

using namespace kflock;

namespace {

InitialDistributionSpec unit_box_1d() {
  InitialDistributionSpec s;
  s.kind = DistributionKind::box_indicator;
  s.dim = 1;
  s.x_lo = Vec(0.0);
  s.x_hi = Vec(1.0);
  s.v_lo = Vec(0.0);
  s.v_hi = Vec(1.0);
  s.sampling.n_x = 32;
  s.sampling.n_v = 32;
  return s;
}

InitialDistributionSpec two_bump_1d() {
  InitialDistributionSpec s;
  s.kind = DistributionKind::two_bump;
  s.dim = 1;
  s.bumps[0] = {Vec(-0.5), Vec(-0.4), 1.0};
  s.bumps[1] = {Vec(0.5), Vec(0.6), 2.0};
  s.half_width_x = 0.4;
  s.half_width_v = 0.3;
  return s;
}

Ensemble single(const Vec& x, const Vec& v, double mass, int dim = 1, double lambda = 1.0) {
  Ensemble e;
  e.dim = dim;
  e.lambda = lambda;
  e.radius = 1.0;
  e.particles.push_back({0, x, v, mass, mass, 1.0});
  e.initial_support_bound = norm(v);
  return e;
}

Ensemble two_particle_pair(double mass, double lambda, double r) {
  Ensemble e;
  e.dim = 1;
  e.lambda = lambda;
  e.radius = r;
  e.particles.push_back({0, Vec(0.0), Vec(1.0), mass, mass, 1.0});
  e.particles.push_back({1, Vec(0.0), Vec(-1.0), mass, mass, 1.0});
  e.initial_support_bound = 1.0;
  return e;
}

Ensemble random_ensemble(std::size_t n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Ensemble e;
  e.dim = dim;
  e.lambda = 1.0;
  e.radius = 0.2;
  for (std::size_t i = 0; i < n; ++i) {
    Vec x, v;
    for (int k = 0; k < dim; ++k) {
      x[k] = u(rng);
      v[k] = 2.0 * u(rng) - 1.0;
    }
    const double w = 0.5 + u(rng);
    e.particles.push_back({i, x, v, w, w, 1.0});
  }
  e.initial_support_bound = e.support_radius();
  return e;
}

}  // namespace

// ---- sampling

TEST(SampleInitial, UnitSquareTensorGrid) {
  const auto e = sample_initial(unit_box_1d(), 1.0, 0.5);
  EXPECT_EQ(e.size(), 1024u);
  EXPECT_NEAR(e.total_mass(), 1.0, 1e-12);
  for (const auto& p : e.particles) {
    EXPECT_DOUBLE_EQ(p.phase_volume, 1.0 / 1024.0);
    EXPECT_EQ(p.density_value, 1.0);
  }
  EXPECT_LE(e.initial_support_bound, 1.0);
}

TEST(SampleInitial, ZeroDensityGivesEmptyEnsemble) {
  auto s = unit_box_1d();
  s.amplitude = 0.0;
  const auto e = sample_initial(s, 1.0, 0.5);
  EXPECT_EQ(e.size(), 0u);
  EXPECT_EQ(e.total_mass(), 0.0);
  s.sampling.kind = SamplingKind::monte_carlo;
  EXPECT_EQ(sample_initial(s, 1.0, 0.5).size(), 0u);
}

TEST(SampleInitial, TwoBumpMonteCarloMean) {
  auto s = two_bump_1d();
  s.sampling.kind = SamplingKind::monte_carlo;
  s.sampling.n = 10000;
  s.sampling.seed = 7;
  const auto e = sample_initial(s, 1.0, 0.5);
  ASSERT_EQ(e.size(), 10000u);
  EXPECT_NEAR(e.total_mass(), analytic_mass(s), 1e-12 * analytic_mass(s));
  double mean = 0.0, sq = 0.0;
  for (const auto& p : e.particles) mean += p.v[0];
  mean /= 1e4;
  for (const auto& p : e.particles) sq += (p.v[0] - mean) * (p.v[0] - mean);
  const double se = std::sqrt(sq / (1e4 - 1.0)) / 100.0;
  const double target = analytic_mean_velocity(s)[0];
  EXPECT_NEAR(target, (1.0 * -0.4 + 2.0 * 0.6) / 3.0, 1e-15);
  EXPECT_LE(std::abs(mean - target), 3.0 * se);
  for (const auto& p : e.particles) EXPECT_NEAR(p.mass, p.density_value * p.phase_volume, 1e-12 * p.mass);
}

TEST(SampleInitial, TwoBumpMassClosedForm) {
  // integral of (1 - z^2)^2 over (-1, 1) is 16/15; Simpson check of the profile
  const int n = 20000;
  double simpson = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = -1.0 + 2.0 * i / n;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    simpson += w * (1 - z * z) * (1 - z * z);
  }
  simpson *= (2.0 / n) / 3.0;
  EXPECT_NEAR(simpson, 16.0 / 15.0, 1e-12);
  auto s = two_bump_1d();
  s.sampling.n_x = 200;
  s.sampling.n_v = 200;
  const auto e = sample_initial(s, 1.0, 0.5);
  EXPECT_NEAR(e.total_mass(), analytic_mass(s), 1e-4 * analytic_mass(s));
}

TEST(SampleInitial, GaussianAndCustomGrid) {
  InitialDistributionSpec g;
  g.kind = DistributionKind::product_gaussian_truncated;
  g.dim = 2;
  g.sigma_x = 0.5;
  g.sigma_v = 0.25;
  g.cutoff = 3.0;
  g.v_center = Vec(0.1, -0.2);
  g.sampling.n_x = 16;
  g.sampling.n_v = 16;
  const auto eg = sample_initial(g, 1.0, 0.5);
  EXPECT_NEAR(eg.total_mass(), analytic_mass(g), 2e-3 * analytic_mass(g));
  EXPECT_LE(eg.initial_support_bound, velocity_support_bound(g));

  InitialDistributionSpec c;
  c.kind = DistributionKind::custom_grid;
  c.dim = 1;
  c.x_lo = Vec(-0.5);
  c.x_hi = Vec(0.5);
  c.v_lo = Vec(-2.0);
  c.v_hi = Vec(2.0);
  c.grid_n_x = 1;
  c.grid_n_v = 2;
  c.values = {1.0, 1.0};
  c.sampling.n_x = 1;
  c.sampling.n_v = 2;
  const auto ec = sample_initial(c, 1.0, 5.0);
  ASSERT_EQ(ec.size(), 2u);
  EXPECT_EQ(ec.particles[0].v[0], -1.0);
  EXPECT_EQ(ec.particles[1].v[0], 1.0);
  EXPECT_EQ(ec.particles[0].x[0], 0.0);
  EXPECT_EQ(ec.total_mass(), 4.0);
  EXPECT_EQ(ec.initial_support_bound, 1.0);
  c.values.pop_back();
  EXPECT_THROW(sample_initial(c, 1.0, 5.0), InvalidInput);
}

TEST(SampleInitial, RejectsBadParameters) {
  auto s = unit_box_1d();
  EXPECT_THROW(sample_initial(s, 0.0, 0.5), InvalidInput);
  EXPECT_THROW(sample_initial(s, 1.0, -1.0), InvalidInput);
  s.amplitude = -1.0;
  EXPECT_THROW(sample_initial(s, 1.0, 0.5), InvalidInput);
}

// ---- moments

TEST(LocalMoments, EmptyNeighborhood) {
  const auto e = single(Vec(5.0), Vec(1.0), 1.0);
  const auto m = local_moments(e, Vec(0.0), 1.0);
  EXPECT_EQ(m.rho, 0.0);
  EXPECT_EQ(norm(m.j), 0.0);
  EXPECT_EQ(norm(velocity_field(e, Vec(0.0), 1.0)), 0.0);
  EXPECT_EQ(norm(velocity_field_delta(e, Vec(0.0), 1.0, 0.1)), 0.0);
}

TEST(LocalMoments, SingleParticle) {
  const auto e = single(Vec(0.1, 0.0), Vec(2.0, 0.0), 0.5, 2);
  const auto m = local_moments(e, Vec(0.0, 0.0), 1.0);
  EXPECT_EQ(m.rho, 0.5);
  EXPECT_EQ(m.j, Vec(1.0, 0.0));
  EXPECT_EQ(velocity_field(e, Vec(), 1.0), Vec(2.0, 0.0));
  EXPECT_DOUBLE_EQ(velocity_field_delta(e, Vec(), 1.0, 0.25)[0], 0.5 / 0.75 * 2.0);
  EXPECT_THROW(velocity_field_delta(e, Vec(), 1.0, 0.0), InvalidInput);
}

TEST(LocalMoments, TwoEqualMassesAverage) {
  Ensemble e = single(Vec(0.0), Vec(0.3), 1.0);
  e.particles.push_back({1, Vec(0.2), Vec(-0.7), 1.0, 1.0, 1.0});
  EXPECT_DOUBLE_EQ(velocity_field(e, Vec(0.1), 1.0)[0], -0.2);
}

TEST(LocalMoments, IndexedMatchesBruteForce) {
  const auto e = random_ensemble(1000, 2, 3);
  const MomentEvaluator ev(e, 0.2);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.1, 1.1);
  for (int q = 0; q < 50; ++q) {
    const Vec x(u(rng), u(rng));
    LocalMoments ref;
    for (const auto& p : e.particles) {
      const Vec d = p.x - x;
      if (std::sqrt(dot(d, d)) < 0.2) {
        ref.rho += p.mass;
        ref.j += p.mass * p.v;
      }
    }
    const auto m = ev.at(x);
    EXPECT_NEAR(m.rho, ref.rho, 1e-14 * std::max(1.0, ref.rho));
    EXPECT_LE(norm(m.j - ref.j), 1e-14 * std::max(1.0, ref.rho));
    const auto b = local_moments(e, x, 0.2);
    EXPECT_NEAR(b.rho, ref.rho, 1e-14 * std::max(1.0, ref.rho));
    // moment bound |j| <= rho * sup|v|
    EXPECT_LE(norm(m.j), m.rho * e.support_radius() * (1 + 1e-15));
  }
}

TEST(LocalMoments, DeltaSweepIdentity) {
  const auto e = random_ensemble(200, 1, 5);
  const Vec x(0.5);
  const auto m = local_moments(e, x, 0.2);
  ASSERT_GT(m.rho, 0.0);
  const Vec u = velocity_field(e, x, 0.2);
  for (double delta : {1e-1, 1e-2, 1e-3}) {
    const Vec ud = velocity_field_delta(e, x, 0.2, delta);
    const double err = norm(u - ud);
    EXPECT_NEAR(err, delta * norm(u) / (delta + m.rho), 1e-14);
    EXPECT_LE(norm(ud), norm(u));
  }
}

// ---- characteristics

TEST(Characteristics, ZeroFieldClosedForm) {
  const auto e = single(Vec(0.0), Vec(1.0), 1.0);
  const auto n = advance_characteristics(e, [](double, const Vec&) { return Vec(); }, 0.5);
  EXPECT_NEAR(n.particles[0].v[0], std::exp(-0.5), 1e-15);
  EXPECT_NEAR(n.particles[0].x[0], 1.0 - std::exp(-0.5), 1e-15);
  EXPECT_NEAR(n.particles[0].v[0], 0.606531, 1e-6);
  EXPECT_NEAR(n.particles[0].x[0], 0.393469, 1e-6);
}

TEST(Characteristics, MassPreservedExactly) {
  const auto e = random_ensemble(300, 2, 6);
  const auto n = advance_characteristics(e, [](double, const Vec& x) { return Vec(std::sin(x[0]), 0.2); }, 0.37);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(n.particles[i].mass, e.particles[i].mass);
}

TEST(Characteristics, DensityAndVolumeFactorsUseDimension) {
  // lambda = 1, d = 2, dt = 0.1: exponent lambda * d * dt = 0.2
  const Ensemble e = single(Vec(0.0, 0.0), Vec(0.5, 0.5), 2.0, 2, 1.0);
  const auto n = advance_characteristics(e, [](double, const Vec&) { return Vec(); }, 0.1);
  EXPECT_NEAR(n.particles[0].density_value / 2.0, std::exp(0.2), 1e-15);
  EXPECT_NEAR(n.particles[0].phase_volume / 1.0, std::exp(-0.2), 1e-15);
  EXPECT_NEAR(n.particles[0].density_value * n.particles[0].phase_volume, 2.0, 1e-15);
}

TEST(Characteristics, NonFiniteFieldReportsParticle) {
  Ensemble e = random_ensemble(10, 1, 7);
  try {
    advance_characteristics(e, [](double, const Vec& x) { return x[0] > 0.5 ? Vec(NAN) : Vec(); }, 0.1);
    FAIL() << "expected propagation error";
  } catch (const PropagationError& err) {
    EXPECT_GT(e.particles[err.particle()].x[0], 0.5);
  }
}

TEST(Characteristics, ConstantFieldExactUnderRefinement) {
  const Vec E(0.3);
  auto run = [&](int n) {
    Ensemble e = single(Vec(0.0), Vec(1.0), 1.0, 1, 2.0);
    for (int k = 0; k < n; ++k) e = advance_characteristics(e, [&](double, const Vec&) { return E; }, 1.0 / n);
    return e.particles[0];
  };
  const double lam = 2.0, t = 1.0;
  const double v_exact = 0.3 + 0.7 * std::exp(-lam * t);
  const double x_exact = 0.3 * t + 0.7 * (1.0 - std::exp(-lam * t)) / lam;
  for (int n : {1, 7, 100}) {
    const auto p = run(n);
    EXPECT_NEAR(p.v[0], v_exact, 1e-14);
    EXPECT_NEAR(p.x[0], x_exact, 1e-14);
  }
}

// ---- self-consistent runs

TEST(SelfConsistent, FlockingStateIsInvariant) {
  auto s = unit_box_1d();
  s.v_lo = Vec(0.4);
  s.v_hi = Vec(0.4 + 1e-9);
  s.sampling.n_v = 1;
  auto e = sample_initial(s, 1.0, 0.3);
  for (auto& p : e.particles) p.v = Vec(0.4);
  e.initial_support_bound = 0.4;
  SelfConsistentOptions opt;
  opt.T = 1.0;
  opt.dt = 0.1;
  const auto run = run_self_consistent(e, opt);
  const auto& last = run.snapshots.back();
  for (std::size_t i = 0; i < e.size(); ++i) {
    EXPECT_NEAR(last.particles[i].v[0], 0.4, 1e-15);
    EXPECT_NEAR(last.particles[i].x[0], e.particles[i].x[0] + 0.4, 1e-14);
  }
}

TEST(SelfConsistent, SymmetricPairDecay) {
  for (double delta : {0.0, 0.5}) {
    const auto e = two_particle_pair(0.5, 1.0, 2.5);
    SelfConsistentOptions opt;
    opt.T = 1.0;
    opt.dt = 0.01;
    opt.delta = delta;
    opt.snapshot_stride = 10;
    const auto run = run_self_consistent(e, opt);
    const auto& last = run.snapshots.back();
    EXPECT_EQ(last.t, 1.0);
    EXPECT_NEAR(last.particles[0].v[0], std::exp(-1.0), 1e-12);
    EXPECT_NEAR(last.particles[1].v[0], -std::exp(-1.0), 1e-12);
    EXPECT_NEAR(last.particles[0].x[0] - last.particles[1].x[0], 2.0 * (1.0 - std::exp(-1.0)), 1e-12);
    EXPECT_EQ(run.snapshots.size(), 11u);
    for (std::size_t k = 1; k < run.support_per_step.size(); ++k)
      EXPECT_LT(run.support_per_step[k], run.support_per_step[k - 1]);
  }
}

TEST(SelfConsistent, MassSupportAndGrowthLaws) {
  auto s = two_bump_1d();
  s.sampling.n_x = 40;
  s.sampling.n_v = 40;
  const auto e = sample_initial(s, 2.0, 0.4);
  for (double delta : {0.0, 1e-3, 1e-1}) {
    SelfConsistentOptions opt;
    opt.T = 1.0;
    opt.dt = 0.05;
    opt.delta = delta;
    opt.snapshot_stride = 5;
    const auto run = run_self_consistent(e, opt);
    const double m0 = e.total_mass();
    for (const auto& snap : run.snapshots) {
      EXPECT_NEAR(snap.total_mass(), m0, 1e-12 * m0);
      EXPECT_LE(snap.support_radius(), e.initial_support_bound + 1e-9);
      for (std::size_t i = 0; i < snap.size(); ++i) {
        const double g = std::exp(2.0 * snap.t);
        EXPECT_NEAR(snap.particles[i].density_value, e.particles[i].density_value * g,
                    1e-12 * e.particles[i].density_value * g);
      }
    }
    for (std::size_t k = 1; k < run.support_per_step.size(); ++k)
      EXPECT_LE(run.support_per_step[k], run.support_per_step[k - 1] * (1 + 1e-14));
  }
}

TEST(SelfConsistent, ThreadsDoNotChangeResult) {
  auto s = two_bump_1d();
  s.sampling.n_x = 30;
  s.sampling.n_v = 30;
  const auto e = sample_initial(s, 1.0, 0.3);
  SelfConsistentOptions a, b;
  a.T = b.T = 0.5;
  a.dt = b.dt = 0.05;
  b.threads = 8;
  const auto ra = run_self_consistent(e, a);
  const auto rb = run_self_consistent(e, b);
  std::ostringstream sa, sb;
  write_snapshot_rows(sa, 0, ra.snapshots.back());
  write_snapshot_rows(sb, 0, rb.snapshots.back());
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(SelfConsistent, StepSizesCoverHorizon) {
  EXPECT_EQ(step_sizes(1.0, 0.25).size(), 4u);
  const auto s = step_sizes(1.0, 0.3);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_NEAR(s.back(), 0.1, 1e-15);
  EXPECT_THROW(step_sizes(0.0, 0.1), InvalidInput);
  EXPECT_THROW(step_sizes(1.0, -0.1), InvalidInput);
  EXPECT_EQ(step_sizes(1.0, 0.01).size(), 100u);
}

TEST(SnapshotCsv, HeaderAndPrecision) {
  const auto e = single(Vec(1.0 / 3.0), Vec(0.1), 0.5);
  std::ostringstream os;
  write_snapshot_header(os, 1);
  write_snapshot_rows(os, 4, e);
  EXPECT_EQ(os.str(),
            "step,t,id,x0,v0,mass,density_value,phase_volume\n"
            "4,0,0,0.33333333333333331,0.10000000000000001,0.5,0.5,1\n");
}
