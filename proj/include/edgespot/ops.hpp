#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>

#include "edgespot/tensor.hpp"

namespace edgespot {

namespace detail {

/// Grad buffer of the i-th parent, or an empty span if it is not tracked.
template <class T>
std::span<T> parent_grad(Node<T>& out, std::size_t i) {
  auto& p = out.parents[i];
  if (!p->requires_grad) return {};
  return p->grad_buffer();
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[MxN] (+)= op(A) * op(B), all row-major. A is MxK (KxM when trans_a),
/// B is KxN (NxK when trans_b).
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using CMap = Eigen::Map<const RowMat<T>>;
  using Map = Eigen::Map<RowMat<T>>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map cm(c, M, N);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate)
      cm.noalias() += lhs * rhs;
    else
      cm.noalias() = lhs * rhs;
  };
  if (!trans_a && !trans_b) run(CMap(a, M, K), CMap(b, K, N));
  if (!trans_a && trans_b) run(CMap(a, M, K), CMap(b, N, K).transpose());
  if (trans_a && !trans_b) run(CMap(a, K, M).transpose(), CMap(b, K, N));
  if (trans_a && trans_b) run(CMap(a, K, M).transpose(), CMap(b, N, K).transpose());
}

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  Buffer<T> y(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xd[i]);
  return make_op<T>(x.shape(), std::move(y), {&x}, [df](Node<T>& out) {
    auto gx = parent_grad(out, 0);
    if (gx.empty()) return;
    const auto& xv = out.parents[0]->data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i] * df(xv[i], out.data[i]);
  });
}

/// Resolves suffix broadcasting: returns (outer repeats, inner length, b_is_inner).
inline std::pair<std::size_t, std::size_t> broadcast_dims(const Shape& big, const Shape& small,
                                                          const char* op) {
  if (small.size() > big.size()) throw ShapeError(std::string(op) + ": rank mismatch");
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(small) + " onto " +
                       shape_str(big));
    }
  }
  const std::size_t inner = shape_numel(small);
  return {inner == 0 ? 0 : shape_numel(big) / inner, inner};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops accept identical shapes or a right-hand
// operand whose shape is a trailing suffix of the left-hand shape.

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto [outer, inner] = detail::broadcast_dims(a.shape(), b.shape(), "add");
  Buffer<T> y(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += bd[i];
  return make_op<T>(a.shape(), std::move(y), {&a, &b}, [outer, inner](Node<T>& out) {
    if (auto ga = detail::parent_grad(out, 0); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
    if (auto gb = detail::parent_grad(out, 1); !gb.empty())
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gb[i] += out.grad[o * inner + i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto [outer, inner] = detail::broadcast_dims(a.shape(), b.shape(), "sub");
  Buffer<T> y(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] -= bd[i];
  return make_op<T>(a.shape(), std::move(y), {&a, &b}, [outer, inner](Node<T>& out) {
    if (auto ga = detail::parent_grad(out, 0); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
    if (auto gb = detail::parent_grad(out, 1); !gb.empty())
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gb[i] -= out.grad[o * inner + i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto [outer, inner] = detail::broadcast_dims(a.shape(), b.shape(), "mul");
  Buffer<T> y(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] = ad[o * inner + i] * bd[i];
  return make_op<T>(a.shape(), std::move(y), {&a, &b}, [outer, inner](Node<T>& out) {
    const auto& av = out.parents[0]->data;
    const auto& bv = out.parents[1]->data;
    if (auto ga = detail::parent_grad(out, 0); !ga.empty())
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) ga[o * inner + i] += out.grad[o * inner + i] * bv[i];
    if (auto gb = detail::parent_grad(out, 1); !gb.empty())
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gb[i] += out.grad[o * inner + i] * av[o * inner + i];
  });
}

/// Multiplies every row of x (leading axis) by the matching entry of s[rows].
template <class T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  const std::size_t rows = x.dim() ? x.size(0) : 0;
  if (s.numel() != rows)
    throw ShapeError("scale_rows: " + shape_str(s.shape()) + " vs rows of " + shape_str(x.shape()));
  const std::size_t width = rows ? x.numel() / rows : 0;
  Buffer<T> y(x.numel());
  auto xd = x.data();
  auto sd = s.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) y[r * width + c] = xd[r * width + c] * sd[r];
  return make_op<T>(x.shape(), std::move(y), {&x, &s}, [rows, width](Node<T>& out) {
    const auto& xv = out.parents[0]->data;
    const auto& sv = out.parents[1]->data;
    if (auto gx = detail::parent_grad(out, 0); !gx.empty())
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c) gx[r * width + c] += out.grad[r * width + c] * sv[r];
    if (auto gs = detail::parent_grad(out, 1); !gs.empty())
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t c = 0; c < width; ++c) acc += out.grad[r * width + c] * xv[r * width + c];
        gs[r] += acc;
      }
  });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> sin(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <class T>
Tensor<T> cos(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <class T>
T sigmoid_value(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
T logit_value(T p) {
  return std::log(p) - std::log1p(-p);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T(1) - y); });
}

/// Inverse sigmoid; inputs must lie strictly inside (0, 1).
template <class T>
Tensor<T> logit(const Tensor<T>& x) {
  return detail::unary(
      x, [](T p) { return logit_value(p); }, [](T p, T) { return T(1) / (p * (T(1) - p)); });
}

/// Clamps into [lo, hi]; the gradient passes only where the input was inside.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); }, [lo, hi](T v, T) { return v >= lo && v <= hi ? T(1) : T(0); });
}

/// log(1 + e^x), stable for large |x|.
template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return sigmoid_value(v); });
}

/// Exact (erf-based) GELU, vectorized through Eigen.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using CMap = Eigen::Map<const Arr>;
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  const auto n = static_cast<Eigen::Index>(x.numel());
  CMap xv(x.data().data(), n);
  Arr e = (xv * inv_sqrt2).erf();
  Buffer<T> y(x.numel());
  Eigen::Map<Arr>(y.data(), n) = T(0.5) * xv * (T(1) + e);
  return make_op<T>(x.shape(), std::move(y), {&x}, [e = std::move(e), n](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    CMap xv(out.parents[0]->data.data(), n);
    CMap dy(out.grad.data(), n);
    Eigen::Map<Arr>(g.data(), n) += dy * (T(0.5) * (T(1) + e) + xv * inv_sqrt2pi * (T(-0.5) * xv.square()).exp());
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_op<T>(Shape{1}, {acc}, {&x}, [](Node<T>& out) {
    if (auto g = detail::parent_grad(out, 0); !g.empty())
      for (auto& v : g) v += out.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

namespace detail {
inline void check_rank3(const Shape& s, const char* op) {
  if (s.size() != 3) throw ShapeError(std::string(op) + ": expected rank-3 tensor, got " + shape_str(s));
}
}  // namespace detail

/// [A x B x C] -> [A x C], averaging over the middle axis.
template <class T>
Tensor<T> mean_middle(const Tensor<T>& x) {
  detail::check_rank3(x.shape(), "mean_middle");
  const std::size_t A = x.size(0), B = x.size(1), C = x.size(2);
  if (B == 0) throw ShapeError("mean_middle: empty middle axis");
  Buffer<T> y(A * C, T(0));
  auto xd = x.data();
  const T inv = T(1) / static_cast<T>(B);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) y[a * C + c] += xd[(a * B + b) * C + c];
  for (auto& v : y) v *= inv;
  return make_op<T>(Shape{A, C}, std::move(y), {&x}, [A, B, C, inv](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[(a * B + b) * C + c] += out.grad[a * C + c] * inv;
  });
}

/// [A x B x C] -> [A x C], max (or min) over the middle axis. The gradient
/// routes to the first extremal element.
template <class T>
Tensor<T> extremum_middle(const Tensor<T>& x, bool take_max) {
  detail::check_rank3(x.shape(), "extremum_middle");
  const std::size_t A = x.size(0), B = x.size(1), C = x.size(2);
  if (B == 0) throw ShapeError("extremum_middle: empty middle axis");
  Buffer<T> y(A * C);
  std::vector<std::size_t> arg(A * C);
  auto xd = x.data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = 0;
      for (std::size_t b = 1; b < B; ++b) {
        const T v = xd[(a * B + b) * C + c];
        const T cur = xd[(a * B + best) * C + c];
        if (take_max ? v > cur : v < cur) best = b;
      }
      arg[a * C + c] = (a * B + best) * C + c;
      y[a * C + c] = xd[arg[a * C + c]];
    }
  return make_op<T>(Shape{A, C}, std::move(y), {&x}, [arg = std::move(arg)](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += out.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Structural ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Buffer<T> y(x.data().begin(), x.data().end());
  return make_op<T>(std::move(shape), std::move(y), {&x}, [](Node<T>& out) {
    if (auto g = detail::parent_grad(out, 0); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

/// Selects rows (leading-axis slices) by index; duplicates are allowed.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> idx) {
  if (x.dim() == 0) throw ShapeError("gather_rows on rank-0 tensor");
  const std::size_t rows = x.size(0);
  const std::size_t width = rows ? x.numel() / rows : 0;
  Shape shape = x.shape();
  shape[0] = idx.size();
  Buffer<T> y(idx.size() * width);
  auto xd = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(idx[r] * width), width,
                y.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return make_op<T>(std::move(shape), std::move(y), {&x}, [idx = std::move(idx), width](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) g[idx[r] * width + c] += out.grad[r * width + c];
  });
}

/// Concatenates along the leading axis; trailing extents must agree.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail)
      throw ShapeError("concat_rows: trailing shape mismatch " + shape_str(p.shape()));
    offsets.push_back(rows);
    rows += p.size(0);
  }
  const std::size_t width = shape_numel(tail);
  Buffer<T> y;
  y.reserve(rows * width);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  Shape shape = tail;
  shape.insert(shape.begin(), rows);
  return make_op_list<T>(std::move(shape), std::move(y), parts, [offsets, width](Node<T>& out) {
    for (std::size_t i = 0; i < out.parents.size(); ++i) {
      auto g = detail::parent_grad(out, i);
      if (g.empty()) continue;
      const std::size_t base = offsets[i] * width;
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += out.grad[base + j];
    }
  });
}

/// Concatenates along the last axis; leading extents must agree.
template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  const std::size_t rows = shape_numel(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin(), p.shape().end() - 1) != lead)
      throw ShapeError("concat_last: leading shape mismatch " + shape_str(p.shape()));
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  Buffer<T> y(rows * total);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto d = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(r * widths[i]), widths[i],
                  y.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    off += widths[i];
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_op_list<T>(std::move(shape), std::move(y), parts, [widths, rows, total](Node<T>& out) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < out.parents.size(); ++i) {
      auto g = detail::parent_grad(out, i);
      if (!g.empty())
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[i]; ++c) g[r * widths[i] + c] += out.grad[r * total + off + c];
      off += widths[i];
    }
  });
}

/// [A x C] -> [A x B x C] by repeating each row B times.
template <class T>
Tensor<T> repeat_middle(const Tensor<T>& x, std::size_t B) {
  if (x.dim() != 2) throw ShapeError("repeat_middle: expected rank-2 input");
  const std::size_t A = x.size(0), C = x.size(1);
  Buffer<T> y(A * B * C);
  auto xd = x.data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(a * C), C,
                  y.begin() + static_cast<std::ptrdiff_t>((a * B + b) * C));
  return make_op<T>(Shape{A, B, C}, std::move(y), {&x}, [A, B, C](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[a * C + c] += out.grad[(a * B + b) * C + c];
  });
}

/// [A x B x C] -> [B x A x C].
template <class T>
Tensor<T> swap_leading(const Tensor<T>& x) {
  detail::check_rank3(x.shape(), "swap_leading");
  const std::size_t A = x.size(0), B = x.size(1), C = x.size(2);
  Buffer<T> y(x.numel());
  auto xd = x.data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((a * B + b) * C), C,
                  y.begin() + static_cast<std::ptrdiff_t>((b * A + a) * C));
  return make_op<T>(Shape{B, A, C}, std::move(y), {&x}, [A, B, C](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[(a * B + b) * C + c] += out.grad[(b * A + a) * C + c];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// x[... x K] * w[K x N] -> [... x N]; with trans_w, w is stored [N x K].
template <class T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w, bool trans_w = false) {
  if (x.dim() < 1 || w.dim() != 2) throw ShapeError("matmul: need x[...xK] and 2-D w");
  const std::size_t K = x.shape().back();
  const std::size_t wk = trans_w ? w.size(1) : w.size(0);
  const std::size_t N = trans_w ? w.size(0) : w.size(1);
  if (wk != K)
    throw ShapeError("matmul: " + shape_str(x.shape()) + " x " + shape_str(w.shape()) +
                     (trans_w ? "^T" : ""));
  const std::size_t M = K ? x.numel() / K : 0;
  Shape shape = x.shape();
  shape.back() = N;
  Buffer<T> y(M * N);
  detail::gemm<T>(false, trans_w, M, N, K, x.data().data(), w.data().data(), y.data(), false);
  return make_op<T>(std::move(shape), std::move(y), {&x, &w}, [M, N, K, trans_w](Node<T>& out) {
    const T* xv = out.parents[0]->data.data();
    const T* wv = out.parents[1]->data.data();
    if (auto gx = detail::parent_grad(out, 0); !gx.empty())
      detail::gemm<T>(false, !trans_w, M, K, N, out.grad.data(), wv, gx.data(), true);
    if (auto gw = detail::parent_grad(out, 1); !gw.empty()) {
      if (trans_w)
        detail::gemm<T>(true, false, N, K, M, out.grad.data(), xv, gw.data(), true);
      else
        detail::gemm<T>(true, false, K, N, M, xv, out.grad.data(), gw.data(), true);
    }
  });
}

/// Batched product a[B x M x K] * b[B x K x N] (b stored [B x N x K] with trans_b).
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false) {
  detail::check_rank3(a.shape(), "bmm");
  detail::check_rank3(b.shape(), "bmm");
  const std::size_t B = a.size(0), M = a.size(1), K = a.size(2);
  const std::size_t bk = trans_b ? b.size(2) : b.size(1);
  const std::size_t N = trans_b ? b.size(1) : b.size(2);
  if (b.size(0) != B || bk != K)
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Buffer<T> y(B * M * N);
  for (std::size_t i = 0; i < B; ++i)
    detail::gemm<T>(false, trans_b, M, N, K, a.data().data() + i * M * K, b.data().data() + i * K * N,
                    y.data() + i * M * N, false);
  return make_op<T>(Shape{B, M, N}, std::move(y), {&a, &b}, [B, M, N, K, trans_b](Node<T>& out) {
    const T* av = out.parents[0]->data.data();
    const T* bv = out.parents[1]->data.data();
    auto ga = detail::parent_grad(out, 0);
    auto gb = detail::parent_grad(out, 1);
    for (std::size_t i = 0; i < B; ++i) {
      const T* dy = out.grad.data() + i * M * N;
      if (!ga.empty())
        detail::gemm<T>(false, !trans_b, M, K, N, dy, bv + i * K * N, ga.data() + i * M * K, true);
      if (!gb.empty()) {
        if (trans_b)
          detail::gemm<T>(true, false, N, K, M, dy, av + i * M * K, gb.data() + i * K * N, true);
        else
          detail::gemm<T>(true, false, K, N, M, av + i * M * K, dy, gb.data() + i * K * N, true);
      }
    }
  });
}

/// softmax(scale * x) over the last axis.
template <class T>
Tensor<T> softmax_last(const Tensor<T>& x, T scale = T(1)) {
  if (x.dim() == 0 || x.shape().back() == 0) throw ShapeError("softmax over empty axis");
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const std::size_t C = x.shape().back();
  const std::size_t rows = x.numel() / C;
  const auto c = static_cast<Eigen::Index>(C);
  Buffer<T> y(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    Eigen::Map<const Arr> in(xd.data() + r * C, c);
    Eigen::Map<Arr> o(y.data() + r * C, c);
    const T mx = in.maxCoeff();
    o = ((in - mx) * scale).exp();
    o *= T(1) / o.sum();
  }
  return make_op<T>(x.shape(), std::move(y), {&x}, [rows, C, c, scale](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    for (std::size_t r = 0; r < rows; ++r) {
      Eigen::Map<const Arr> yv(out.data.data() + r * C, c);
      Eigen::Map<const Arr> dy(out.grad.data() + r * C, c);
      const T dot = (dy * yv).sum();
      Eigen::Map<Arr>(g.data() + r * C, c) += scale * yv * (dy - dot);
    }
  });
}

}  // namespace edgespot
