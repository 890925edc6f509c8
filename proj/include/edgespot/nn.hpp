#pragma once

// Layers and fused losses built on the op set in ops.hpp.

#include <string>
#include <utility>
#include <vector>

#include "edgespot/ops.hpp"
#include "edgespot/rng.hpp"

namespace edgespot {

/// Named parameter list; order is the serialization and optimizer order.
template <class T>
struct ParamSet {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  void add(std::string name, const Tensor<T>& t) { items.emplace_back(std::move(name), t); }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items) n += t.numel();
    return n;
  }
  void zero_grad() {
    for (auto& [_, t] : items) t.zero_grad();
  }
};

template <class T>
Tensor<T> param_uniform(Shape shape, double bound, Rng& rng) {
  Buffer<T> d(shape_numel(shape));
  for (auto& v : d) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(d), true);
}

template <class T>
Tensor<T> param_full(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

// ---------------------------------------------------------------------------

/// Layer normalization over the last axis with learned scale and shift.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.dim() == 0 || x.shape().back() == 0) throw ShapeError("layer_norm: empty last axis");
  const std::size_t C = x.shape().back();
  if (gamma.numel() != C || beta.numel() != C) throw ShapeError("layer_norm: scale/shift width mismatch");
  const std::size_t rows = x.numel() / C;
  Buffer<T> y(x.numel());
  Buffer<T> xhat(x.numel());
  Buffer<T> inv_std(rows);
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * C;
    T mu = 0;
    for (std::size_t c = 0; c < C; ++c) mu += in[c];
    mu /= static_cast<T>(C);
    T var = 0;
    for (std::size_t c = 0; c < C; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(C);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      const T h = (in[c] - mu) * is;
      xhat[r * C + c] = h;
      y[r * C + c] = h * gd[c] + bd[c];
    }
  }
  return make_op<T>(x.shape(), std::move(y), {&x, &gamma, &beta},
                    [rows, C, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& out) {
                      const auto& gv = out.parents[1]->data;
                      auto gx = detail::parent_grad(out, 0);
                      auto gg = detail::parent_grad(out, 1);
                      auto gb = detail::parent_grad(out, 2);
                      const T invC = T(1) / static_cast<T>(C);
                      for (std::size_t r = 0; r < rows; ++r) {
                        const T* dy = out.grad.data() + r * C;
                        const T* h = xhat.data() + r * C;
                        if (!gx.empty()) {
                          T m1 = 0, m2 = 0;
                          for (std::size_t c = 0; c < C; ++c) {
                            const T dh = dy[c] * gv[c];
                            m1 += dh;
                            m2 += dh * h[c];
                          }
                          m1 *= invC;
                          m2 *= invC;
                          for (std::size_t c = 0; c < C; ++c)
                            gx[r * C + c] += inv_std[r] * (dy[c] * gv[c] - m1 - h[c] * m2);
                        }
                        if (!gg.empty())
                          for (std::size_t c = 0; c < C; ++c) gg[c] += dy[c] * h[c];
                        if (!gb.empty())
                          for (std::size_t c = 0; c < C; ++c) gb[c] += dy[c];
                      }
                    });
}

template <class T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width)
      : gamma(param_full<T>({width}, T(1))), beta(param_full<T>({width}, T(0))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
  }
};

/// y = x W + b with W stored [in x out].
template <class T>
struct AffineLayer {
  Tensor<T> weight, bias;

  AffineLayer() = default;
  AffineLayer(Tensor<T> w, Tensor<T> b) : weight(std::move(w)), bias(std::move(b)) {
    if (weight.dim() != 2 || bias.numel() != weight.size(1))
      throw ShapeError("AffineLayer: weight " + shape_str(weight.shape()) + " / bias " + shape_str(bias.shape()));
  }
  /// Xavier-uniform weights, zero bias.
  AffineLayer(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0)
      : AffineLayer(param_uniform<T>({in, out}, gain * std::sqrt(6.0 / static_cast<double>(in + out)), rng),
                    param_full<T>({out}, T(0))) {}

  std::size_t in_features() const { return weight.size(0); }
  std::size_t out_features() const { return weight.size(1); }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }
  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

enum class Activation { identity, gelu, relu };

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  switch (a) {
    case Activation::gelu: return gelu(x);
    case Activation::relu: return relu(x);
    case Activation::identity: break;
  }
  return x;
}

/// Affine layers with an activation between consecutive layers (none after the last).
template <class T>
struct Mlp {
  std::vector<AffineLayer<T>> layers;
  Activation activation = Activation::gelu;

  Mlp() = default;
  Mlp(std::vector<AffineLayer<T>> ls, Activation act) : layers(std::move(ls)), activation(act) {
    for (std::size_t i = 1; i < layers.size(); ++i)
      if (layers[i - 1].out_features() != layers[i].in_features())
        throw ShapeError("Mlp: layer " + std::to_string(i) + " expects " +
                         std::to_string(layers[i].in_features()) + " inputs, previous emits " +
                         std::to_string(layers[i - 1].out_features()));
  }
  Mlp(const std::vector<std::size_t>& widths, Rng& rng, Activation act = Activation::gelu) : activation(act) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers.emplace_back(widths[i], widths[i + 1], rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (!layers.empty() && x.shape().back() != layers.front().in_features())
      throw ShapeError("Mlp: input width " + std::to_string(x.shape().back()) + " vs " +
                       std::to_string(layers.front().in_features()));
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i](h);
      if (i + 1 < layers.size()) h = activate(h, activation);
    }
    return h;
  }
  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), ps);
  }
};

// ---------------------------------------------------------------------------
// Convolution on HWC images (batch handled by the caller).

/// x[H x W x Cin] -> columns[(Ho*Wo) x (k*k*Cin)] with zero padding.
template <class T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t pad) {
  detail::check_rank3(x.shape(), "im2col");
  const std::size_t H = x.size(0), W = x.size(1), C = x.size(2);
  if (stride == 0 || H + 2 * pad < k || W + 2 * pad < k)
    throw ShapeError("im2col: kernel larger than padded input " + shape_str(x.shape()));
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  const std::size_t cols = k * k * C;
  Buffer<T> y(Ho * Wo * cols, T(0));
  auto xd = x.data();
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      T* row = y.data() + (oy * Wo + ox) * cols;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          std::copy_n(xd.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C, C,
                      row + (ky * k + kx) * C);
        }
      }
    }
  return make_op<T>(Shape{Ho * Wo, cols}, std::move(y), {&x},
                    [H, W, C, Ho, Wo, k, stride, pad, cols](Node<T>& out) {
                      auto g = detail::parent_grad(out, 0);
                      if (g.empty()) return;
                      for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                          const T* row = out.grad.data() + (oy * Wo + ox) * cols;
                          for (std::size_t ky = 0; ky < k; ++ky) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                              const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                              T* dst = g.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C;
                              const T* src = row + (ky * k + kx) * C;
                              for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                            }
                          }
                        }
                    });
}

/// Square-kernel 2-D convolution via im2col + matmul. Weight is stored
/// [(k*k*Cin) x Cout] so it doubles as an AffineLayer over patches.
template <class T>
struct Conv2d {
  AffineLayer<T> proj;
  std::size_t kernel = 3, stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(std::size_t cin, std::size_t cout, std::size_t k, std::size_t s, std::size_t p, Rng& rng)
      : proj(param_uniform<T>({k * k * cin, cout}, std::sqrt(6.0 / static_cast<double>(k * k * cin)), rng),
             param_full<T>({cout}, T(0))),
        kernel(k), stride(s), pad(p) {}

  std::size_t in_channels() const { return proj.in_features() / (kernel * kernel); }
  std::size_t out_channels() const { return proj.out_features(); }

  static std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
    return in + 2 * p < k ? 0 : (in + 2 * p - k) / s + 1;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::check_rank3(x.shape(), "conv2d");
    if (x.size(2) != in_channels())
      throw ShapeError("conv2d: input channels " + std::to_string(x.size(2)) + " vs " + std::to_string(in_channels()));
    const std::size_t Ho = out_extent(x.size(0), kernel, stride, pad);
    const std::size_t Wo = out_extent(x.size(1), kernel, stride, pad);
    if (Ho == 0 || Wo == 0) throw ShapeError("conv2d: output extent < 1 for input " + shape_str(x.shape()));
    return reshape(proj(im2col(x, kernel, stride, pad)), {Ho, Wo, out_channels()});
  }
  void collect(const std::string& prefix, ParamSet<T>& ps) const { proj.collect(prefix, ps); }
};

// ---------------------------------------------------------------------------

/// Bilinear sampling of feat[H x W x C] at normalized points pts[P x 2]
/// (x, y in [0,1], pixel centers at (i + 0.5) / extent). Coordinates are
/// clamped to the border; the gradient flows to both features and points.
template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& feat, const Tensor<T>& pts) {
  detail::check_rank3(feat.shape(), "bilinear_sample");
  if (pts.dim() != 2 || pts.size(1) != 2) throw ShapeError("bilinear_sample: points must be [P x 2]");
  const std::size_t H = feat.size(0), W = feat.size(1), C = feat.size(2), P = pts.size(0);
  struct Tap {
    std::size_t x0, x1, y0, y1;
    T fx, fy;
    bool clamp_x, clamp_y;
  };
  std::vector<Tap> taps(P);
  Buffer<T> y(P * C);
  auto fd = feat.data();
  auto pd = pts.data();
  for (std::size_t p = 0; p < P; ++p) {
    T gx = pd[2 * p] * static_cast<T>(W) - T(0.5);
    T gy = pd[2 * p + 1] * static_cast<T>(H) - T(0.5);
    Tap t{};
    t.clamp_x = gx < 0 || gx > static_cast<T>(W - 1);
    t.clamp_y = gy < 0 || gy > static_cast<T>(H - 1);
    gx = std::clamp(gx, T(0), static_cast<T>(W - 1));
    gy = std::clamp(gy, T(0), static_cast<T>(H - 1));
    t.x0 = static_cast<std::size_t>(std::floor(gx));
    t.y0 = static_cast<std::size_t>(std::floor(gy));
    t.x1 = std::min(t.x0 + 1, W - 1);
    t.y1 = std::min(t.y0 + 1, H - 1);
    t.fx = gx - static_cast<T>(t.x0);
    t.fy = gy - static_cast<T>(t.y0);
    taps[p] = t;
    const T* f00 = fd.data() + (t.y0 * W + t.x0) * C;
    const T* f01 = fd.data() + (t.y0 * W + t.x1) * C;
    const T* f10 = fd.data() + (t.y1 * W + t.x0) * C;
    const T* f11 = fd.data() + (t.y1 * W + t.x1) * C;
    const T w00 = (1 - t.fx) * (1 - t.fy), w01 = t.fx * (1 - t.fy), w10 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
    for (std::size_t c = 0; c < C; ++c) y[p * C + c] = w00 * f00[c] + w01 * f01[c] + w10 * f10[c] + w11 * f11[c];
  }
  return make_op<T>(Shape{P, C}, std::move(y), {&feat, &pts}, [taps = std::move(taps), W, H, C](Node<T>& out) {
    const auto& fv = out.parents[0]->data;
    auto gf = detail::parent_grad(out, 0);
    auto gp = detail::parent_grad(out, 1);
    for (std::size_t p = 0; p < taps.size(); ++p) {
      const Tap& t = taps[p];
      const T* dy = out.grad.data() + p * C;
      const std::size_t i00 = (t.y0 * W + t.x0) * C, i01 = (t.y0 * W + t.x1) * C;
      const std::size_t i10 = (t.y1 * W + t.x0) * C, i11 = (t.y1 * W + t.x1) * C;
      if (!gf.empty()) {
        const T w00 = (1 - t.fx) * (1 - t.fy), w01 = t.fx * (1 - t.fy), w10 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
        for (std::size_t c = 0; c < C; ++c) {
          gf[i00 + c] += w00 * dy[c];
          gf[i01 + c] += w01 * dy[c];
          gf[i10 + c] += w10 * dy[c];
          gf[i11 + c] += w11 * dy[c];
        }
      }
      if (!gp.empty()) {
        T dfx = 0, dfy = 0;
        for (std::size_t c = 0; c < C; ++c) {
          const T a = fv[i00 + c], b = fv[i01 + c], cc = fv[i10 + c], d = fv[i11 + c];
          dfx += dy[c] * ((b - a) * (1 - t.fy) + (d - cc) * t.fy);
          dfy += dy[c] * ((cc - a) * (1 - t.fx) + (d - b) * t.fx);
        }
        if (!t.clamp_x) gp[2 * p] += dfx * static_cast<T>(W);
        if (!t.clamp_y) gp[2 * p + 1] += dfy * static_cast<T>(H);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean softmax cross-entropy of logits[R x V] against integer targets.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
  if (logits.dim() != 2) throw ShapeError("cross_entropy: logits must be [R x V]");
  const std::size_t R = logits.size(0), V = logits.size(1);
  if (targets.size() != R) throw ShapeError("cross_entropy: target count mismatch");
  if (R == 0) throw ShapeError("cross_entropy: no rows");
  Buffer<T> prob(R * V);
  T total = 0;
  auto ld = logits.data();
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = ld.data() + r * V;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= V)
      throw ShapeError("cross_entropy: target out of range");
    const T mx = *std::max_element(in, in + V);
    T s = 0;
    for (std::size_t v = 0; v < V; ++v) s += (prob[r * V + v] = std::exp(in[v] - mx));
    for (std::size_t v = 0; v < V; ++v) prob[r * V + v] /= s;
    total += -(in[targets[r]] - mx - std::log(s));
  }
  const T inv = T(1) / static_cast<T>(R);
  return make_op<T>(Shape{1}, {total * inv}, {&logits}, [prob = std::move(prob), targets, R, V, inv](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    const T s = out.grad[0] * inv;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t v = 0; v < V; ++v)
        g[r * V + v] += s * (prob[r * V + v] - (static_cast<int>(v) == targets[r] ? T(1) : T(0)));
  });
}

/// Summed sigmoid focal loss over logits with binary targets.
template <class T>
Tensor<T> sigmoid_focal_loss(const Tensor<T>& logits, const std::vector<int>& targets, T alpha = T(0.25),
                             T gamma = T(2)) {
  if (targets.size() != logits.numel()) throw ShapeError("focal loss: target count mismatch");
  const std::size_t n = logits.numel();
  Buffer<T> y(n);
  T total = 0;
  auto ld = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = ld[i];
    const T p = sigmoid_value(x);
    const bool pos = targets[i] != 0;
    const T sp_neg = std::max(-x, T(0)) + std::log1p(std::exp(-std::abs(x)));  // -log p
    const T sp_pos = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));   // -log(1-p)
    const T ce = pos ? sp_neg : sp_pos;
    const T q = pos ? T(1) - p : p;
    const T a = pos ? alpha : T(1) - alpha;
    total += a * std::pow(q, gamma) * ce;
  }
  return make_op<T>(Shape{1}, {total}, {&logits}, [targets, alpha, gamma](Node<T>& out) {
    auto g = detail::parent_grad(out, 0);
    if (g.empty()) return;
    const auto& lv = out.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = lv[i];
      const T p = sigmoid_value(x);
      const bool pos = targets[i] != 0;
      const T ce = pos ? std::max(-x, T(0)) + std::log1p(std::exp(-std::abs(x)))
                       : std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
      const T q = pos ? T(1) - p : p;
      const T a = pos ? alpha : T(1) - alpha;
      // d q/dx = -p(1-p) for positives, +p(1-p) for negatives; d ce/dx = p-1 or p.
      const T dq = (pos ? T(-1) : T(1)) * p * (T(1) - p);
      const T dce = pos ? p - T(1) : p;
      const T dqg = gamma * std::pow(q, gamma - T(1)) * dq;
      g[i] += out.grad[0] * a * (dqg * ce + std::pow(q, gamma) * dce);
    }
  });
}

// ---------------------------------------------------------------------------

/// Single-head scaled dot-product attention over rank-3 [B x L x C] inputs.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  const T scale = T(1) / std::sqrt(static_cast<T>(q.shape().back()));
  return bmm(softmax_last(bmm(q, k, true), scale), v);
}

}  // namespace edgespot
