#pragma once

// Minimum-cost rectangular assignment (shortest augmenting paths with
// potentials, O(r^2 c)).

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace edgespot {

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  double total_cost = 0;
};

/// cost is row-major [rows x cols]. Every row is matched when rows <= cols,
/// otherwise every column is.
inline Assignment hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  if (cost.size() != rows * cols) throw std::invalid_argument("hungarian: cost size does not match rows x cols");
  for (double c : cost)
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost");
  Assignment out;
  if (rows == 0 || cols == 0) return out;
  const bool flip = rows > cols;
  const std::size_t n = flip ? cols : rows, m = flip ? rows : cols;
  auto a = [&](std::size_t i, std::size_t j) { return flip ? cost[j * cols + i] : cost[i * cols + j]; };

  // 1-based arrays; p[j] is the row matched to column j (0 = free).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (std::size_t j = 1; j <= m; ++j) {
    if (!p[j]) continue;
    const std::size_t r = p[j] - 1, c = j - 1;
    out.pairs.emplace_back(flip ? c : r, flip ? r : c);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (auto [r, c] : out.pairs) out.total_cost += cost[r * cols + c];
  return out;
}

}  // namespace edgespot
