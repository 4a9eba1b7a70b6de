#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kflock/errors.hpp"
#include "kflock/vec.hpp"

namespace kflock {

inline void check_dim(int dim) {
  if (dim < 1 || dim > 3)
    throw InvalidInput("spatial dimension must be 1, 2 or 3, got " + std::to_string(dim));
}

/// Positions and velocities of N discrete agents.
struct AgentState {
  double t = 0.0;
  int dim = 1;
  std::vector<Vec> positions;
  std::vector<Vec> velocities;

  std::size_t size() const { return positions.size(); }

  void validate() const {
    check_dim(dim);
    if (positions.size() != velocities.size())
      throw InvalidInput("agent state: positions and velocities differ in length");
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (!is_finite(positions[i]) || !is_finite(velocities[i]))
        throw InvalidInput("agent state: non-finite entry at agent " + std::to_string(i));
      for (int k = dim; k < 3; ++k)
        if (positions[i][k] != 0.0 || velocities[i][k] != 0.0)
          throw InvalidInput("agent state: component beyond dim is non-zero at agent " +
                             std::to_string(i));
    }
  }
};

/// Maps an angle into (-pi, pi].
inline double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(theta, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

/// Planar constant-speed agents of the heading-averaging model.
struct HeadingState {
  std::size_t t = 0;
  std::vector<Vec> positions;
  std::vector<double> headings;
  double speed = 1.0;
  /// Number of updates so far where the summed neighbor direction vanished.
  std::size_t degenerate_events = 0;

  std::size_t size() const { return positions.size(); }

  void validate() const {
    if (!(speed > 0.0) || !std::isfinite(speed))
      throw InvalidInput("heading state: speed must be positive and finite");
    if (positions.size() != headings.size())
      throw InvalidInput("heading state: positions and headings differ in length");
    for (std::size_t i = 0; i < headings.size(); ++i) {
      if (!is_finite(positions[i]) || !std::isfinite(headings[i]))
        throw InvalidInput("heading state: non-finite entry at agent " + std::to_string(i));
      if (positions[i][2] != 0.0) throw InvalidInput("heading state: positions must be planar");
    }
  }
};

/// Weighted sample of the phase-space density carried along one characteristic.
/// mass == density_value * phase_volume; the two factors move by reciprocal
/// exponentials so the mass itself never changes.
struct PhaseParticle {
  std::size_t id = 0;
  Vec x;
  Vec v;
  double mass = 0.0;
  double density_value = 0.0;
  double phase_volume = 0.0;
};

struct Ensemble {
  double t = 0.0;
  int dim = 1;
  double lambda = 1.0;
  double radius = 1.0;
  std::vector<PhaseParticle> particles;
  double initial_support_bound = 0.0;

  std::size_t size() const { return particles.size(); }

  /// Fixed-order sum, so the result is reproducible across runs.
  double total_mass() const {
    double m = 0.0;
    for (const auto& p : particles) m += p.mass;
    return m;
  }

  /// M(t): largest speed over the (discrete) support.
  double support_radius() const {
    double m = 0.0;
    for (const auto& p : particles) m = std::max(m, norm(p.v));
    return m;
  }

  double max_density_value() const {
    double m = 0.0;
    for (const auto& p : particles) m = std::max(m, p.density_value);
    return m;
  }

  std::vector<Vec> positions() const {
    std::vector<Vec> out;
    out.reserve(particles.size());
    for (const auto& p : particles) out.push_back(p.x);
    return out;
  }
};

/// Mass and momentum inside an open ball of radius r.
struct LocalMoments {
  double rho = 0.0;
  Vec j;
};

/// Uniform-grid cell hash answering exact strict-radius queries.
/// Immutable after construction; concurrent queries are safe.
class SpatialIndex {
 public:
  SpatialIndex() = default;

  SpatialIndex(std::span<const Vec> positions, double cell_size)
      : points_(positions.begin(), positions.end()), cell_size_(cell_size) {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
      throw InvalidInput("spatial index: cell_size must be positive and finite");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!is_finite(points_[i]))
        throw InvalidInput("spatial index: non-finite position at index " + std::to_string(i));
      cells_[cell_of(points_[i])].push_back(i);
    }
  }

  std::size_t size() const { return points_.size(); }
  std::size_t occupied_cells() const { return cells_.size(); }
  double cell_size() const { return cell_size_; }
  const Vec& point(std::size_t i) const { return points_[i]; }

  /// Indices j with |x_j - center| < r, in increasing order.
  std::vector<std::size_t> query(const Vec& center, double r) const {
    std::vector<std::size_t> out;
    query_into(center, r, out);
    return out;
  }

  void query_into(const Vec& center, double r, std::vector<std::size_t>& out) const {
    out.clear();
    if (!(r > 0.0)) throw InvalidInput("radius query: r must be positive");
    if (points_.empty()) return;
    thread_local std::vector<std::size_t> runs;
    runs.assign(1, 0);
    CellKey lo{}, hi{};
    double span_cells = 1.0;
    for (int k = 0; k < 3; ++k) {
      lo[k] = cell_coord(center[k] - r);
      hi[k] = cell_coord(center[k] + r);
      span_cells *= static_cast<double>(hi[k] - lo[k] + 1);
    }
    if (span_cells > static_cast<double>(cells_.size())) {
      for (const auto& [key, members] : cells_) {
        bool inside = true;
        for (int k = 0; k < 3; ++k) inside = inside && key[k] >= lo[k] && key[k] <= hi[k];
        if (inside) collect(members, center, r, out, runs);
      }
    } else {
      CellKey key{};
      for (key[0] = lo[0]; key[0] <= hi[0]; ++key[0])
        for (key[1] = lo[1]; key[1] <= hi[1]; ++key[1])
          for (key[2] = lo[2]; key[2] <= hi[2]; ++key[2]) {
            auto it = cells_.find(key);
            if (it != cells_.end()) collect(it->second, center, r, out, runs);
          }
    }
    // each cell contributes an increasing run; merge runs pairwise
    while (runs.size() > 2) {
      std::size_t w = 1;
      for (std::size_t i = 0; i + 2 < runs.size(); i += 2) {
        std::inplace_merge(out.begin() + static_cast<std::ptrdiff_t>(runs[i]),
                           out.begin() + static_cast<std::ptrdiff_t>(runs[i + 1]),
                           out.begin() + static_cast<std::ptrdiff_t>(runs[i + 2]));
        runs[w++] = runs[i + 2];
      }
      if (runs.size() % 2 == 0) runs[w++] = runs.back();
      runs.resize(w);
    }
  }

 private:
  using CellKey = std::array<std::int64_t, 3>;

  struct KeyHash {
    std::size_t operator()(const CellKey& k) const noexcept {
      std::uint64_t h = 1469598103934665603ull;
      for (auto c : k) {
        h ^= static_cast<std::uint64_t>(c) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      }
      return static_cast<std::size_t>(h);
    }
  };

  std::int64_t cell_coord(double x) const {
    // monotone in x, so the query box brackets every point with |x_k - c_k| < r
    const double q = std::floor(x / cell_size_);
    constexpr double lim = 4.0e18;
    return static_cast<std::int64_t>(std::clamp(q, -lim, lim));
  }

  CellKey cell_of(const Vec& p) const { return {cell_coord(p[0]), cell_coord(p[1]), cell_coord(p[2])}; }

  // cell members are stored in increasing index order
  void collect(const std::vector<std::size_t>& members, const Vec& center, double r,
               std::vector<std::size_t>& out, std::vector<std::size_t>& runs) const {
    for (auto j : members)
      if (within_radius(points_[j], center, r)) out.push_back(j);
    if (out.size() > runs.back()) runs.push_back(out.size());
  }

  std::vector<Vec> points_;
  double cell_size_ = 1.0;
  std::unordered_map<CellKey, std::vector<std::size_t>, KeyHash> cells_;
};

inline SpatialIndex build_index(std::span<const Vec> positions, double cell_size) {
  return SpatialIndex(positions, cell_size);
}

inline std::vector<std::size_t> query_radius(const SpatialIndex& index, const Vec& center,
                                             double r) {
  return index.query(center, r);
}

}  // namespace kflock
