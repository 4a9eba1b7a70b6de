#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "kflock/phase_core.hpp"

using namespace kflock;

namespace {

std::vector<std::size_t> brute_force(const std::vector<Vec>& pts, const Vec& c, double r) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec d = pts[i] - c;
    if (std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) < r) out.push_back(i);
  }
  return out;
}

}  // namespace

TEST(SpatialIndex, OneDimensionalConstruction) {
  const std::vector<Vec> pts{Vec(0.0), Vec(0.5), Vec(2.0)};
  const auto idx = build_index(pts, 1.0);
  EXPECT_EQ(idx.size(), 3u);
  EXPECT_EQ(idx.occupied_cells(), 2u);
}

TEST(SpatialIndex, EmptyIndexAnswersEmpty) {
  const std::vector<Vec> pts;
  const auto idx = build_index(pts, 1.0);
  EXPECT_TRUE(query_radius(idx, Vec(0.0), 10.0).empty());
  EXPECT_TRUE(query_radius(idx, Vec(1e6, -3.0), 0.1).empty());
}

TEST(SpatialIndex, BasicQuery) {
  const std::vector<Vec> pts{Vec(0.0), Vec(0.5), Vec(2.0)};
  const auto idx = build_index(pts, 1.0);
  EXPECT_EQ(query_radius(idx, Vec(0.0), 1.0), (std::vector<std::size_t>{0, 1}));
}

TEST(SpatialIndex, BoundaryPointExcluded) {
  const std::vector<Vec> pts{Vec(0.0), Vec(1.0), Vec(0.25)};
  const auto idx = build_index(pts, 1.0);
  EXPECT_EQ(query_radius(idx, Vec(0.0), 1.0), (std::vector<std::size_t>{0, 2}));
  // 3-4-5 triangle: distance exactly 5
  const std::vector<Vec> pts2{Vec(3.0, 4.0), Vec(0.0, 0.0)};
  const auto idx2 = build_index(pts2, 0.7);
  EXPECT_EQ(query_radius(idx2, Vec(0.0, 0.0), 5.0), (std::vector<std::size_t>{1}));
}

TEST(SpatialIndex, FarCenterIsEmpty) {
  const std::vector<Vec> pts{Vec(0.0), Vec(0.5), Vec(2.0)};
  const auto idx = build_index(pts, 1.0);
  EXPECT_TRUE(query_radius(idx, Vec(100.0), 1.0).empty());
}

TEST(SpatialIndex, NonFinitePositionRejected) {
  const std::vector<Vec> pts{Vec(0.0), Vec(std::nan(""))};
  EXPECT_THROW(build_index(pts, 1.0), InvalidInput);
  const std::vector<Vec> pts2{Vec(0.0, INFINITY)};
  EXPECT_THROW(build_index(pts2, 1.0), InvalidInput);
}

TEST(SpatialIndex, InvalidCellSizeAndRadius) {
  const std::vector<Vec> pts{Vec(0.0)};
  EXPECT_THROW(build_index(pts, 0.0), InvalidInput);
  EXPECT_THROW(build_index(pts, -1.0), InvalidInput);
  const auto idx = build_index(pts, 1.0);
  EXPECT_THROW(query_radius(idx, Vec(0.0), 0.0), InvalidInput);
}

TEST(SpatialIndex, MatchesBruteForceOnRandomCloud) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec> pts(10000);
  for (auto& p : pts) p = Vec(u(rng), u(rng));
  const auto idx = build_index(pts, 0.05);
  for (int q = 0; q < 100; ++q) {
    const Vec c(u(rng) * 1.2 - 0.1, u(rng) * 1.2 - 0.1);
    const double r = 0.001 + 0.2 * u(rng);
    EXPECT_EQ(query_radius(idx, c, r), brute_force(pts, c, r)) << "query " << q;
  }
}

TEST(SpatialIndex, MatchesBruteForceInThreeDimensionsAndLargeRadius) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<Vec> pts(2000);
  for (auto& p : pts) p = Vec(n(rng), n(rng), n(rng));
  const auto idx = build_index(pts, 0.3);
  for (double r : {0.05, 0.5, 3.0, 50.0}) {
    const Vec c(n(rng), n(rng), n(rng));
    EXPECT_EQ(query_radius(idx, c, r), brute_force(pts, c, r));
  }
}

TEST(SpatialIndex, QueryAtMemberContainsItself) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Vec> pts(500);
  for (auto& p : pts) p = Vec(u(rng), u(rng));
  const auto idx = build_index(pts, 0.4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto hits = query_radius(idx, pts[i], 0.4);
    EXPECT_TRUE(std::binary_search(hits.begin(), hits.end(), i));
  }
}

TEST(SpatialIndex, PermutationInvariantAsSet) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec> pts(300);
  for (auto& p : pts) p = Vec(u(rng), u(rng));
  std::vector<std::size_t> perm(pts.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Vec> shuffled(pts.size());
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = pts[perm[i]];
  const auto a = build_index(pts, 0.1);
  const auto b = build_index(shuffled, 0.1);
  for (int q = 0; q < 20; ++q) {
    const Vec c(u(rng), u(rng));
    auto hits_b = query_radius(b, c, 0.15);
    for (auto& h : hits_b) h = perm[h];
    std::sort(hits_b.begin(), hits_b.end());
    EXPECT_EQ(query_radius(a, c, 0.15), hits_b);
  }
}

TEST(PhaseCore, WrapAngle) {
  EXPECT_DOUBLE_EQ(wrap_angle(std::numbers::pi), std::numbers::pi);
  EXPECT_DOUBLE_EQ(wrap_angle(-std::numbers::pi), std::numbers::pi);
  EXPECT_NEAR(wrap_angle(3.0 * std::numbers::pi / 2.0), -std::numbers::pi / 2.0, 1e-15);
  EXPECT_NEAR(wrap_angle(0.25 + 4.0 * std::numbers::pi), 0.25, 1e-14);
}

TEST(PhaseCore, AgentStateValidation) {
  AgentState s;
  s.dim = 2;
  s.positions = {Vec(0.0, 1.0)};
  s.velocities = {Vec(1.0, 0.0)};
  EXPECT_NO_THROW(s.validate());
  s.velocities.push_back(Vec());
  EXPECT_THROW(s.validate(), InvalidInput);
  s.velocities.pop_back();
  s.positions[0] = Vec(0.0, 0.0, 1.0);
  EXPECT_THROW(s.validate(), InvalidInput);
  s.positions[0] = Vec(std::nan(""), 0.0);
  EXPECT_THROW(s.validate(), InvalidInput);
  s.dim = 4;
  EXPECT_THROW(s.validate(), InvalidInput);
}

TEST(PhaseCore, HeadingStateValidation) {
  HeadingState h;
  h.positions = {Vec(0.0, 0.0)};
  h.headings = {0.3};
  h.speed = 0.5;
  EXPECT_NO_THROW(h.validate());
  h.speed = 0.0;
  EXPECT_THROW(h.validate(), InvalidInput);
}

TEST(PhaseCore, EnsembleAggregates) {
  Ensemble e;
  e.dim = 2;
  e.particles.push_back({0, Vec(0.0, 0.0), Vec(3.0, 4.0), 0.5, 2.0, 0.25});
  e.particles.push_back({1, Vec(1.0, 0.0), Vec(1.0, 0.0), 0.25, 1.0, 0.25});
  EXPECT_DOUBLE_EQ(e.total_mass(), 0.75);
  EXPECT_DOUBLE_EQ(e.support_radius(), 5.0);
  EXPECT_DOUBLE_EQ(e.max_density_value(), 2.0);
}
