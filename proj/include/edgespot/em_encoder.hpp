#pragma once

// Multi-level token construction and the efficient-mixer transformer encoder.
//
// The mixer replaces the N x N query-key product of softmax attention with a
// learned per-channel vector: every token gets one scalar attention weight
// (its query dotted with W_m), which rescales that token's value row. Cost
// and memory are O(N * C).

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "edgespot/nn.hpp"

namespace edgespot {

struct LevelSpan {
  int level = 0;  // pyramid level id (3..6)
  std::size_t start = 0;
  std::size_t length = 0;  // height * width
  std::size_t height = 0;
  std::size_t width = 0;

  bool operator==(const LevelSpan&) const = default;
};

template <class T>
struct TokenFeatures {
  Tensor<T> tokens;  // [N x C]
  std::vector<LevelSpan> spans;

  std::size_t count() const { return tokens.size(0); }
  std::size_t channels() const { return tokens.size(1); }
};

/// Validates span bookkeeping: contiguous, disjoint, ordered, covering N.
inline void check_spans(const std::vector<LevelSpan>& spans, std::size_t n) {
  std::size_t next = 0;
  int prev_level = -1;
  for (const auto& s : spans) {
    if (s.start != next || s.length != s.height * s.width || s.level <= prev_level)
      throw ShapeError("level spans are not contiguous and ordered");
    next += s.length;
    prev_level = s.level;
  }
  if (next != n) throw ShapeError("level spans cover " + std::to_string(next) + " of " + std::to_string(n) + " tokens");
}

template <class T>
void require_finite(const Tensor<T>& t, const char* stage) {
  for (T v : t.data())
    if (!std::isfinite(static_cast<double>(v))) throw NumericError(std::string("non-finite value at stage '") + stage + "'");
}

/// Flattens F3, F4, F5 and F6 = down(F5) row-major and concatenates them in
/// level order. `down` is the 3x3 stride-2 convolution producing F6.
template <class T>
TokenFeatures<T> build_multilevel_tokens(const Tensor<T>& f3, const Tensor<T>& f4, const Tensor<T>& f5,
                                         const Conv2d<T>& down) {
  for (const auto* f : {&f3, &f4, &f5}) {
    detail::check_rank3(f->shape(), "build_multilevel_tokens");
    if (f->size(0) < 1 || f->size(1) < 1) throw ShapeError("feature map with empty spatial extent");
  }
  const std::size_t C = f3.size(2);
  if (f4.size(2) != C || f5.size(2) != C)
    throw ShapeError("feature maps disagree on channel count: " + shape_str(f3.shape()) + ", " +
                     shape_str(f4.shape()) + ", " + shape_str(f5.shape()));
  Tensor<T> f6 = down(f5);
  if (f6.size(2) != C) throw ShapeError("F6 convolution changes the channel count");
  TokenFeatures<T> out;
  std::vector<Tensor<T>> flat;
  std::size_t start = 0;
  int level = 3;
  for (const Tensor<T>* f : {&f3, &f4, &f5, static_cast<const Tensor<T>*>(&f6)}) {
    const std::size_t h = f->size(0), w = f->size(1);
    out.spans.push_back({level++, start, h * w, h, w});
    start += h * w;
    flat.push_back(reshape(*f, {h * w, C}));
  }
  out.tokens = concat_rows(flat);
  return out;
}

/// Token-space extent of the F6 map that build_multilevel_tokens will append.
inline std::size_t downsampled_extent(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

// ---------------------------------------------------------------------------

template <class T>
struct EMMixerParams {
  Tensor<T> w_k;  // [C x C], produces Q (= K)
  Tensor<T> w_v;  // [C x C]
  Tensor<T> w_m;  // [C], multi-level attention weights
  AffineLayer<T> phi_inner;
  AffineLayer<T> phi_outer;
  std::size_t scale_dim = 0;  // D in the 1/sqrt(D) factor; equals C

  EMMixerParams() = default;
  EMMixerParams(std::size_t C, Rng& rng)
      : w_k(param_uniform<T>({C, C}, std::sqrt(6.0 / (2.0 * C)), rng)),
        w_v(param_uniform<T>({C, C}, std::sqrt(6.0 / (2.0 * C)), rng)),
        w_m(param_uniform<T>({C}, 1.0 / std::sqrt(static_cast<double>(C)), rng)),
        phi_inner(C, C, rng),
        phi_outer(C, C, rng),
        scale_dim(C) {}

  std::size_t channels() const { return w_m.numel(); }

  void validate() const {
    const std::size_t C = channels();
    auto square = [C](const Tensor<T>& m) { return m.dim() == 2 && m.size(0) == C && m.size(1) == C; };
    if (!square(w_k) || !square(w_v) || !square(phi_inner.weight) || !square(phi_outer.weight) || scale_dim != C)
      throw ShapeError("EMMixerParams: every projection must be " + std::to_string(C) + "x" + std::to_string(C));
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    ps.add(prefix + ".w_k", w_k);
    ps.add(prefix + ".w_v", w_v);
    ps.add(prefix + ".w_m", w_m);
    phi_inner.collect(prefix + ".phi_inner", ps);
    phi_outer.collect(prefix + ".phi_outer", ps);
  }
};

template <class T>
struct MixerTrace {
  Tensor<T> attn_weights;  // [N], one scalar per token
  Tensor<T> context_map;   // G [N x C]
  std::size_t largest_intermediate = 0;  // element count of the biggest buffer created
  Shape largest_shape;
};

/// Efficient mixer forward. Returns the mixed tokens and the trace of its
/// intermediate attention products.
template <class T>
std::pair<Tensor<T>, MixerTrace<T>> efficient_mixer(const Tensor<T>& x, const EMMixerParams<T>& p) {
  if (x.dim() != 2 || x.size(0) < 1) throw ShapeError("efficient_mixer: expected [N x C] with N >= 1");
  p.validate();
  if (x.size(1) != p.channels()) throw ShapeError("efficient_mixer: channel mismatch");
  const std::size_t N = x.size(0), C = x.size(1);
  MixerTrace<T> trace;
  auto note = [&trace](const Tensor<T>& t, const char* stage) {
    require_finite(t, stage);
    if (t.numel() > trace.largest_intermediate) {
      trace.largest_intermediate = t.numel();
      trace.largest_shape = t.shape();
    }
    return t;
  };
  require_finite(x, "input");
  Tensor<T> q = note(matmul(x, p.w_k), "query");
  Tensor<T> v = note(matmul(x, p.w_v), "value");
  Tensor<T> attn = note(reshape(matmul(q, reshape(p.w_m, {C, 1})), {N}), "attention weights");
  Tensor<T> scaled = note(mul_scalar(attn, T(1) / std::sqrt(static_cast<T>(p.scale_dim))), "scaled weights");
  Tensor<T> context = note(scale_rows(v, scaled), "context");
  Tensor<T> g = note(p.phi_inner(context), "context map");
  Tensor<T> mixed = note(add(g, q), "residual query");
  Tensor<T> out = note(p.phi_outer(mixed), "output");
  trace.attn_weights = attn;
  trace.context_map = g;
  return {out, trace};
}

// ---------------------------------------------------------------------------
// Reference softmax self-attention (single head), used by the ablation
// baseline encoder and the scaling benchmark.

template <class T>
struct SoftmaxAttentionParams {
  AffineLayer<T> q, k, v, out;

  SoftmaxAttentionParams() = default;
  SoftmaxAttentionParams(std::size_t C, Rng& rng) : q(C, C, rng), k(C, C, rng), v(C, C, rng), out(C, C, rng) {}

  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    q.collect(prefix + ".q", ps);
    k.collect(prefix + ".k", ps);
    v.collect(prefix + ".v", ps);
    out.collect(prefix + ".out", ps);
  }
};

template <class T>
Tensor<T> softmax_self_attention(const Tensor<T>& x, const SoftmaxAttentionParams<T>& p) {
  const std::size_t N = x.size(0), C = x.size(1);
  auto as3 = [&](const Tensor<T>& t) { return reshape(t, {1, N, C}); };
  Tensor<T> y = attention(as3(p.q(x)), as3(p.k(x)), as3(p.v(x)));
  return p.out(reshape(y, {N, C}));
}

// ---------------------------------------------------------------------------

enum class MixerKind { efficient, softmax };

inline const char* to_string(MixerKind k) { return k == MixerKind::efficient ? "efficient" : "softmax"; }

/// Pre-norm residual block: X = Mix(LN(F)) + F; out = MLP(LN(X)) + X.
template <class T>
struct EncoderBlock {
  MixerKind kind = MixerKind::efficient;
  LayerNorm<T> norm1, norm2;
  EMMixerParams<T> em;
  SoftmaxAttentionParams<T> sa;
  Mlp<T> mlp;

  EncoderBlock() = default;
  EncoderBlock(std::size_t C, std::size_t hidden, MixerKind k, Rng& rng, Activation act = Activation::gelu)
      : kind(k), norm1(C), norm2(C) {
    if (k == MixerKind::efficient)
      em = EMMixerParams<T>(C, rng);
    else
      sa = SoftmaxAttentionParams<T>(C, rng);
    mlp = Mlp<T>({C, hidden, C}, rng, act);
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    norm1.collect(prefix + ".norm1", ps);
    if (kind == MixerKind::efficient)
      em.collect(prefix + ".em", ps);
    else
      sa.collect(prefix + ".attn", ps);
    norm2.collect(prefix + ".norm2", ps);
    mlp.collect(prefix + ".mlp", ps);
  }
};

template <class T>
TokenFeatures<T> emt_block(const TokenFeatures<T>& f, const EncoderBlock<T>& b) {
  check_spans(f.spans, f.count());
  Tensor<T> normed = b.norm1(f.tokens);
  Tensor<T> mixed = b.kind == MixerKind::efficient ? efficient_mixer(normed, b.em).first
                                                   : softmax_self_attention(normed, b.sa);
  Tensor<T> x = add(mixed, f.tokens);
  Tensor<T> out = add(b.mlp(b.norm2(x)), x);
  return {out, f.spans};
}

template <class T>
TokenFeatures<T> encoder_stack(const TokenFeatures<T>& f, const std::vector<EncoderBlock<T>>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("encoder_stack: depth must be >= 1");
  TokenFeatures<T> h = f;
  for (const auto& b : blocks) h = emt_block(h, b);
  return h;
}

}  // namespace edgespot
