#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>

namespace kflock {

/// Point or velocity in R^d, d <= 3. Components at index >= d are kept at zero,
/// so norms and dot products never need to know the active dimension.
struct Vec {
  std::array<double, 3> c{0.0, 0.0, 0.0};

  constexpr Vec() = default;
  constexpr Vec(double x, double y = 0.0, double z = 0.0) : c{x, y, z} {}

  constexpr double& operator[](std::size_t i) { return c[i]; }
  constexpr double operator[](std::size_t i) const { return c[i]; }

  constexpr Vec& operator+=(const Vec& o) {
    c[0] += o.c[0];
    c[1] += o.c[1];
    c[2] += o.c[2];
    return *this;
  }
  constexpr Vec& operator-=(const Vec& o) {
    c[0] -= o.c[0];
    c[1] -= o.c[1];
    c[2] -= o.c[2];
    return *this;
  }
  constexpr Vec& operator*=(double s) {
    c[0] *= s;
    c[1] *= s;
    c[2] *= s;
    return *this;
  }

  friend constexpr Vec operator+(Vec a, const Vec& b) { return a += b; }
  friend constexpr Vec operator-(Vec a, const Vec& b) { return a -= b; }
  friend constexpr Vec operator-(Vec a) { return a *= -1.0; }
  friend constexpr Vec operator*(Vec a, double s) { return a *= s; }
  friend constexpr Vec operator*(double s, Vec a) { return a *= s; }
  friend constexpr Vec operator/(Vec a, double s) {
    a.c[0] /= s;
    a.c[1] /= s;
    a.c[2] /= s;
    return a;
  }
  friend constexpr bool operator==(const Vec&, const Vec&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Vec& v) {
    return os << '(' << v.c[0] << ", " << v.c[1] << ", " << v.c[2] << ')';
  }
};

constexpr double dot(const Vec& a, const Vec& b) {
  return a.c[0] * b.c[0] + a.c[1] * b.c[1] + a.c[2] * b.c[2];
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double distance(const Vec& a, const Vec& b) { return norm(a - b); }

/// Strict neighborhood test |a - b| < r used by every cut-off in the library.
inline bool within_radius(const Vec& a, const Vec& b, double r) {
  return distance(a, b) < r;
}

inline bool is_finite(const Vec& a) {
  return std::isfinite(a.c[0]) && std::isfinite(a.c[1]) && std::isfinite(a.c[2]);
}

}  // namespace kflock
