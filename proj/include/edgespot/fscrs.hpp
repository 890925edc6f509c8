#pragma once

// Feature sampling with Catmull-Rom splines: per-pixel control-point
// prediction in logit space, top-K proposal selection, differentiable curve
// sampling, sinusoidal positional queries and control-point density maps.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "edgespot/catmull_rom.hpp"
#include "edgespot/image.hpp"
#include "edgespot/nn.hpp"

namespace edgespot {

inline constexpr double kLogitClamp = 1e-6;

/// Clamps a normalized coordinate into [1e-6, 1 - 1e-6] so its logit is finite.
inline double clamp_unit(double p) { return std::clamp(p, kLogitClamp, 1.0 - kLogitClamp); }

/// crp_j = sigmoid(offset_j + logit(pixel)) componentwise. The pixel must be
/// strictly inside (0,1)^2; callers holding boundary coordinates clamp with
/// clamp_unit() first.
inline ControlPointSet predict_control_points(Point2 pixel, const std::array<Point2, 4>& offsets) {
  auto inside = [](double v) { return v > 0 && v < 1; };
  if (!inside(pixel.x) || !inside(pixel.y))
    throw std::domain_error("predict_control_points: pixel coordinate on or outside the unit-square boundary; "
                            "clamp to [1e-6, 1-1e-6] before predicting");
  const double lx = logit_value(pixel.x), ly = logit_value(pixel.y);
  ControlPointSet out;
  for (int j = 0; j < 4; ++j) out[j] = {sigmoid_value(offsets[j].x + lx), sigmoid_value(offsets[j].y + ly)};
  return out;
}

/// Indices of the K largest scores in descending order; ties go to the lower index.
template <class T>
std::vector<std::size_t> select_topk(std::span<const T> scores, std::size_t k) {
  if (k < 1) throw std::invalid_argument("select_topk: K must be >= 1");
  if (k > scores.size())
    throw std::invalid_argument("select_topk: K = " + std::to_string(k) + " exceeds " + std::to_string(scores.size()) +
                                " candidates");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

/// pc[K x 8] (four xy points per row) -> [K x n x 2] through a constant
/// [n x 4] basis.
template <class T>
Tensor<T> apply_curve_basis(const Tensor<T>& pc, const std::vector<std::array<double, 4>>& basis) {
  if (pc.dim() != 2 || pc.size(1) != 8) throw ShapeError("apply_curve_basis: control points must be [K x 8]");
  const std::size_t K = pc.size(0), n = basis.size();
  Buffer<T> y(K * n * 2, T(0));
  auto d = pc.data();
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (int j = 0; j < 4; ++j) {
        const T w = static_cast<T>(basis[i][j]);
        y[(k * n + i) * 2] += w * d[k * 8 + 2 * j];
        y[(k * n + i) * 2 + 1] += w * d[k * 8 + 2 * j + 1];
      }
  return make_op<T>(Shape{K, n, 2}, std::move(y), {&pc}, [basis, K, n](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < 4; ++j) {
          const T w = static_cast<T>(basis[i][j]);
          g[k * 8 + 2 * j] += w * out.grad[(k * n + i) * 2];
          g[k * 8 + 2 * j + 1] += w * out.grad[(k * n + i) * 2 + 1];
        }
  });
}

/// Angular frequencies of the positional encoding: C/4 values geometric
/// between pi and 64 pi, so features resolve roughly 1/128 of the image.
inline std::vector<double> pe_frequencies(std::size_t channels) {
  if (channels == 0 || channels % 4 != 0)
    throw std::invalid_argument("positional encoding needs a channel count divisible by 4, got " +
                                std::to_string(channels));
  const std::size_t f = channels / 4;
  std::vector<double> out(f);
  for (std::size_t k = 0; k < f; ++k)
    out[k] = std::numbers::pi * std::pow(64.0, f == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(f - 1));
  return out;
}

/// Sinusoidal encoding of points[... x 2] into [... x C]:
/// [sin(x w) | sin(y w) | cos(x w) | cos(y w)].
template <class T>
Tensor<T> positional_encoding(const Tensor<T>& points, std::size_t channels) {
  if (points.dim() < 1 || points.shape().back() != 2) throw ShapeError("positional_encoding: points must be [... x 2]");
  const auto freqs = pe_frequencies(channels);
  const std::size_t f = freqs.size();
  Buffer<T> proj(2 * 2 * f, T(0));  // [2 x 2f]
  for (std::size_t k = 0; k < f; ++k) {
    proj[k] = static_cast<T>(freqs[k]);
    proj[2 * f + f + k] = static_cast<T>(freqs[k]);
  }
  Tensor<T> w(Shape{2, 2 * f}, std::move(proj));
  Tensor<T> angles = matmul(points, w);
  return concat_last(std::vector<Tensor<T>>{sin(angles), cos(angles)});
}

/// P_q = MLP(PE(P_s)).
template <class T>
Tensor<T> positional_queries(const Tensor<T>& sampled, const Mlp<T>& mlp, std::size_t channels) {
  return mlp(positional_encoding(sampled, channels));
}

template <class T>
struct ProposalSet {
  std::size_t K = 0;
  std::size_t n = 0;
  std::vector<std::size_t> token_index;  // source token of each proposal
  Tensor<T> control_points;              // [K x 8]
  Tensor<T> sampled_points;              // [K x n x 2]
  Tensor<T> queries;                     // [K x n x C]
  Tensor<T> scores;                      // [K], descending

  std::vector<ControlPointSet> control_point_sets() const {
    std::vector<ControlPointSet> out(K);
    auto d = control_points.data();
    for (std::size_t k = 0; k < K; ++k)
      for (int j = 0; j < 4; ++j) out[k][j] = {static_cast<double>(d[k * 8 + 2 * j]), static_cast<double>(d[k * 8 + 2 * j + 1])};
    return out;
  }
};

// ---------------------------------------------------------------------------

struct DensityGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> cells;  // row-major counts

  double total() const { return std::accumulate(cells.begin(), cells.end(), 0.0); }
};

/// 2-D histogram of every control point over a width x height grid.
inline DensityGrid control_point_density_map(const std::vector<ControlPointSet>& proposals, std::size_t width,
                                             std::size_t height) {
  if (width < 1 || height < 1) throw std::invalid_argument("density grid extents must be >= 1");
  DensityGrid g{width, height, std::vector<double>(width * height, 0.0)};
  for (const auto& cps : proposals)
    for (const auto& p : cps) {
      const auto cx = std::min(width - 1, static_cast<std::size_t>(std::clamp(p.x, 0.0, 1.0) * width));
      const auto cy = std::min(height - 1, static_cast<std::size_t>(std::clamp(p.y, 0.0, 1.0) * height));
      g.cells[cy * width + cx] += 1;
    }
  return g;
}

inline void write_density_csv(const std::filesystem::path& path, const DensityGrid& g) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) os << (x ? "," : "") << g.cells[y * g.width + x];
    os << '\n';
  }
}

/// Linear grayscale rendering: the largest cell maps to 255, empty cells to 0.
inline GrayImage density_to_image(const DensityGrid& g) {
  GrayImage img(g.width, g.height);
  const double mx = g.cells.empty() ? 0 : *std::max_element(g.cells.begin(), g.cells.end());
  for (std::size_t i = 0; i < g.cells.size(); ++i)
    img.pixels[i] = mx > 0 ? static_cast<std::uint8_t>(std::lround(255.0 * std::max(0.0, g.cells[i]) / mx)) : 0;
  return img;
}

inline DensityGrid read_density_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  DensityGrid g;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        g.cells.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::logic_error&) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad numeric cell '" + cell + "'");
      }
      ++cols;
    }
    if (g.width == 0) g.width = cols;
    if (cols != g.width) throw DataError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    ++g.height;
  }
  if (g.height == 0) throw DataError(path.string() + ": empty density grid");
  return g;
}

}  // namespace edgespot
