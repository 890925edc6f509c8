#pragma once

// Catmull-Rom curve evaluation for four-point text centerlines.
//
// A segment over (P0, P1, P2, P3) is p(u) = [1 u u^2 u^3] M(tau) [P0 P1 P2 P3]^T,
// interpolating P1 at u = 0 and P2 at u = 1 with tangents tau (P2 - P0) and
// tau (P3 - P1). Four control points form three chained segments with the end
// points duplicated, so the curve passes through all four:
//   (c0, c0, c1, c2), (c0, c1, c2, c3), (c1, c2, c3, c3).

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace edgespot {

inline constexpr double kDefaultTension = 0.5;

struct Point2 {
  double x = 0;
  double y = 0;

  bool operator==(const Point2&) const = default;
};

using ControlPointSet = std::array<Point2, 4>;
using Mat4 = std::array<std::array<double, 4>, 4>;

/// M(tau): rows are the coefficients of 1, u, u^2, u^3.
constexpr Mat4 catrom_matrix(double tau) {
  return {{{0, 1, 0, 0},
           {-tau, 0, tau, 0},
           {2 * tau, tau - 3, 3 - 2 * tau, -tau},
           {-tau, 2 - tau, tau - 2, tau}}};
}

/// U(u) M(tau): the four segment weights at parameter u in [0, 1].
inline std::array<double, 4> catrom_basis(double u, double tau = kDefaultTension) {
  if (!(u >= 0 && u <= 1)) throw std::domain_error("catrom_basis: u outside [0, 1]");
  if (u == 0) return {0, 1, 0, 0};
  if (u == 1) return {0, 0, 1, 0};
  const Mat4 m = catrom_matrix(tau);
  const double U[4] = {1, u, u * u, u * u * u};
  std::array<double, 4> w{};
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) w[j] += U[i] * m[i][j];
  return w;
}

/// d/du of the segment weights.
inline std::array<double, 4> catrom_basis_derivative(double u, double tau = kDefaultTension) {
  const Mat4 m = catrom_matrix(tau);
  const double dU[4] = {0, 1, 2 * u, 3 * u * u};
  std::array<double, 4> w{};
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) w[j] += dU[i] * m[i][j];
  return w;
}

/// Splits a global parameter t in [0, 1] into (segment, local u).
inline std::pair<int, double> chained_segment(double t) {
  if (!(t >= 0 && t <= 1)) throw std::domain_error("curve parameter outside [0, 1]");
  const double s = 3 * t;
  const int seg = std::min(2, static_cast<int>(std::floor(s)));
  return {seg, s - seg};
}

/// Folds segment weights onto the four control points for a given segment.
inline std::array<double, 4> fold_segment_weights(int seg, const std::array<double, 4>& w) {
  switch (seg) {
    case 0: return {w[0] + w[1], w[2], w[3], 0};
    case 1: return w;
    default: return {0, w[0], w[1], w[2] + w[3]};
  }
}

/// Weights over (c0..c3) of the chained curve at global parameter t.
inline std::array<double, 4> chained_weights(double t, double tau = kDefaultTension) {
  auto [seg, u] = chained_segment(t);
  return fold_segment_weights(seg, catrom_basis(u, tau));
}

inline Point2 combine(const ControlPointSet& c, const std::array<double, 4>& w) {
  Point2 p;
  for (int j = 0; j < 4; ++j) {
    if (w[j] == 0) continue;
    p.x += w[j] * c[j].x;
    p.y += w[j] * c[j].y;
  }
  return p;
}

inline Point2 curve_point(const ControlPointSet& c, double t, double tau = kDefaultTension) {
  return combine(c, chained_weights(t, tau));
}

/// Derivative with respect to t of segment `seg` at local parameter u
/// (one-sided at the joins).
inline Point2 segment_derivative(const ControlPointSet& c, int seg, double u, double tau = kDefaultTension) {
  auto w = fold_segment_weights(seg, catrom_basis_derivative(u, tau));
  Point2 d = combine(c, w);
  return {3 * d.x, 3 * d.y};
}

/// Rows of chained weights for n parameter-uniform samples: an [n x 4] matrix.
inline std::vector<std::array<double, 4>> sampling_basis(std::size_t n, double tau = kDefaultTension) {
  if (n < 2) throw std::invalid_argument("sampling needs n >= 2");
  std::vector<std::array<double, 4>> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = chained_weights(static_cast<double>(i) / static_cast<double>(n - 1), tau);
  return rows;
}

enum class SamplingMode { parameter, arc_length };

/// n samples along the chained curve; the first equals c0 and the last c3.
inline std::vector<Point2> sample_curve(const ControlPointSet& c, std::size_t n, double tau = kDefaultTension,
                                        SamplingMode mode = SamplingMode::parameter) {
  if (n < 2) throw std::invalid_argument("sample_curve: n must be >= 2");
  std::vector<Point2> out(n);
  if (mode == SamplingMode::parameter) {
    const auto basis = sampling_basis(n, tau);
    for (std::size_t i = 0; i < n; ++i) out[i] = combine(c, basis[i]);
    return out;
  }
  // Arc length: dense polyline, then invert cumulative length.
  constexpr std::size_t dense = 1024;
  std::vector<double> t(dense + 1), s(dense + 1, 0.0);
  Point2 prev = c[0];
  for (std::size_t i = 0; i <= dense; ++i) {
    t[i] = static_cast<double>(i) / dense;
    const Point2 p = curve_point(c, t[i], tau);
    if (i) s[i] = s[i - 1] + std::hypot(p.x - prev.x, p.y - prev.y);
    prev = p;
  }
  const double total = s.back();
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || total == 0) {
      out[i] = i == 0 ? c[0] : curve_point(c, static_cast<double>(i) / (n - 1), tau);
      continue;
    }
    if (i == n - 1) {
      out[i] = c[3];
      continue;
    }
    const double target = total * static_cast<double>(i) / static_cast<double>(n - 1);
    const auto it = std::lower_bound(s.begin(), s.end(), target);
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(it - s.begin()));
    const double f = s[k] > s[k - 1] ? (target - s[k - 1]) / (s[k] - s[k - 1]) : 0.0;
    out[i] = curve_point(c, t[k - 1] + f * (t[k] - t[k - 1]), tau);
  }
  return out;
}

}  // namespace edgespot
