#pragma once

// Desk-scale spotter: strided-conv backbone, multi-level token encoder,
// per-token curve proposals, a point-query decoder and four output heads.

#include <json.hpp>

#include "edgespot/alphabet.hpp"
#include "edgespot/em_encoder.hpp"
#include "edgespot/fscrs.hpp"
#include "edgespot/image.hpp"

namespace edgespot {

/// curve: per-token Catmull-Rom control points (the full method).
/// box: per-token axis-aligned boxes whose horizontal midline supplies the
/// sampled points (ablation baseline).
enum class ProposalKind { curve, box };

inline const char* to_string(ProposalKind k) { return k == ProposalKind::curve ? "curve" : "box"; }

struct SpotterConfig {
  std::size_t image_size = 128;
  std::size_t channels = 32;
  std::size_t encoder_depth = 1;
  std::size_t decoder_depth = 2;
  std::size_t num_proposals = 100;
  std::size_t num_points = 25;
  std::size_t num_classes = 96;
  std::size_t mlp_ratio = 2;
  double tension = kDefaultTension;
  double box_pad = 0.08;  // added to the sampled-point extent for the reference box
  MixerKind encoder = MixerKind::efficient;
  ProposalKind proposals = ProposalKind::curve;

  std::size_t hidden() const { return channels * mlp_ratio; }
  std::size_t vocab() const { return num_classes + 1; }
  std::size_t token_count() const {
    const std::size_t s3 = image_size / 8, s4 = image_size / 16, s5 = image_size / 32, s6 = downsampled_extent(s5);
    return s3 * s3 + s4 * s4 + s5 * s5 + s6 * s6;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("spotter config: " + m); };
    if (image_size < 32 || image_size % 32 != 0) fail("image_size must be a positive multiple of 32");
    if (channels < 4 || channels % 4 != 0) fail("channels must be a multiple of 4");
    if (encoder_depth < 1) fail("encoder_depth must be >= 1");
    if (num_proposals < 1) fail("K must be >= 1");
    if (num_points < 2) fail("n must be >= 2");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
    if (num_proposals > token_count())
      fail("K = " + std::to_string(num_proposals) + " exceeds the " + std::to_string(token_count()) + " tokens");
  }
};

inline nlohmann::json to_json(const SpotterConfig& c) {
  return {{"image_size", c.image_size},       {"channels", c.channels},       {"encoder_depth", c.encoder_depth},
          {"decoder_depth", c.decoder_depth}, {"num_proposals", c.num_proposals}, {"num_points", c.num_points},
          {"num_classes", c.num_classes},     {"mlp_ratio", c.mlp_ratio},     {"tension", c.tension},
          {"box_pad", c.box_pad},             {"encoder", to_string(c.encoder)}, {"proposals", to_string(c.proposals)}};
}

inline SpotterConfig spotter_config_from_json(const nlohmann::json& j) {
  SpotterConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
  c.decoder_depth = j.value("decoder_depth", c.decoder_depth);
  c.num_proposals = j.value("num_proposals", c.num_proposals);
  c.num_points = j.value("num_points", c.num_points);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.tension = j.value("tension", c.tension);
  c.box_pad = j.value("box_pad", c.box_pad);
  const auto enc = j.value("encoder", std::string("efficient"));
  if (enc != "efficient" && enc != "softmax") throw std::invalid_argument("unknown encoder kind '" + enc + "'");
  c.encoder = enc == "efficient" ? MixerKind::efficient : MixerKind::softmax;
  const auto prop = j.value("proposals", std::string("curve"));
  if (prop != "curve" && prop != "box") throw std::invalid_argument("unknown proposal kind '" + prop + "'");
  c.proposals = prop == "curve" ? ProposalKind::curve : ProposalKind::box;
  c.validate();
  return c;
}

/// 8-bit image -> [H x W x 1] with values in [0, 1].
template <class T>
Tensor<T> image_tensor(const GrayImage& img) {
  Buffer<T> d(img.pixels.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(img.pixels[i]) / T(255);
  return Tensor<T>(Shape{img.height, img.width, 1}, std::move(d));
}

// ---------------------------------------------------------------------------
// Backbone

template <class T>
struct FeaturePyramid {
  Tensor<T> f2, f3, f4, f5;  // strides 4, 8, 16, 32
};

/// Stride-2 stem followed by four stride-2 stages, GELU after each.
template <class T>
struct Backbone {
  std::vector<Conv2d<T>> convs;

  Backbone() = default;
  Backbone(std::size_t C, Rng& rng) {
    convs.emplace_back(1, C, 3, 2, 1, rng);
    for (int i = 0; i < 4; ++i) convs.emplace_back(C, C, 3, 2, 1, rng);
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i), ps);
  }
};

template <class T>
FeaturePyramid<T> backbone_forward(const Tensor<T>& image, const Backbone<T>& b) {
  detail::check_rank3(image.shape(), "backbone");
  if (image.size(0) % 32 != 0 || image.size(1) % 32 != 0 || image.size(0) == 0 || image.size(1) == 0)
    throw ShapeError("backbone: image extents " + shape_str(image.shape()) + " must be positive multiples of 32");
  std::vector<Tensor<T>> maps;
  Tensor<T> x = image;
  for (const auto& c : b.convs) {
    x = gelu(c(x));
    maps.push_back(x);
  }
  return {maps[1], maps[2], maps[3], maps[4]};
}

/// Normalized pixel centers of every token, [N x 2] flattened.
inline std::vector<double> token_centers(const std::vector<LevelSpan>& spans) {
  std::vector<double> out;
  for (const auto& s : spans)
    for (std::size_t i = 0; i < s.length; ++i) {
      out.push_back((static_cast<double>(i % s.width) + 0.5) / static_cast<double>(s.width));
      out.push_back((static_cast<double>(i / s.width) + 0.5) / static_cast<double>(s.height));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Decoder

template <class T>
struct DecoderLayer {
  LayerNorm<T> norm_intra, norm_inter, norm_cross, norm_ffn;
  SoftmaxAttentionParams<T> intra, inter, cross;
  Mlp<T> ffn;

  DecoderLayer() = default;
  DecoderLayer(std::size_t C, std::size_t hidden, Rng& rng)
      : norm_intra(C), norm_inter(C), norm_cross(C), norm_ffn(C), intra(C, rng), inter(C, rng), cross(C, rng),
        ffn({C, hidden, C}, rng) {}

  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    norm_intra.collect(prefix + ".norm_intra", ps);
    intra.collect(prefix + ".intra", ps);
    norm_inter.collect(prefix + ".norm_inter", ps);
    inter.collect(prefix + ".inter", ps);
    norm_cross.collect(prefix + ".norm_cross", ps);
    cross.collect(prefix + ".cross", ps);
    norm_ffn.collect(prefix + ".norm_ffn", ps);
    ffn.collect(prefix + ".ffn", ps);
  }
};

namespace detail {
template <class T>
Tensor<T> attend(const SoftmaxAttentionParams<T>& p, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  return p.out(attention(p.q(q), p.k(k), p.v(v)));
}
}  // namespace detail

/// One pre-norm layer over x[K x n x C]: attention among the n points of each
/// instance, attention across the K instances at each point index,
/// cross-attention to memory[N x C] (keys carry memory_pos), feed-forward.
template <class T>
Tensor<T> decoder_layer(const Tensor<T>& x, const Tensor<T>& memory, const Tensor<T>& memory_pos,
                        const DecoderLayer<T>& L) {
  detail::check_rank3(x.shape(), "decoder");
  const std::size_t K = x.size(0), n = x.size(1), C = x.size(2), N = memory.size(0);
  Tensor<T> h = L.norm_intra(x);
  Tensor<T> y = add(x, detail::attend(L.intra, h, h, h));
  h = swap_leading(L.norm_inter(y));
  y = add(y, swap_leading(detail::attend(L.inter, h, h, h)));
  h = reshape(L.norm_cross(y), {1, K * n, C});
  Tensor<T> keys = reshape(add(memory, memory_pos), {1, N, C});
  Tensor<T> vals = reshape(memory, {1, N, C});
  y = add(y, reshape(detail::attend(L.cross, h, keys, vals), {K, n, C}));
  return add(y, L.ffn(L.norm_ffn(y)));
}

template <class T>
Tensor<T> decoder_forward(const Tensor<T>& queries, const Tensor<T>& memory, const Tensor<T>& memory_pos,
                          const std::vector<DecoderLayer<T>>& layers) {
  Tensor<T> x = queries;
  for (const auto& L : layers) x = decoder_layer(x, memory, memory_pos, L);
  return x;
}

// ---------------------------------------------------------------------------
// Heads

template <class T>
struct PredictionHeads {
  LayerNorm<T> norm;
  AffineLayer<T> instance, chars, points, box;

  PredictionHeads() = default;
  PredictionHeads(std::size_t C, std::size_t vocab, Rng& rng)
      : norm(C), instance(C, 1, rng), chars(C, vocab, rng), points(C, 2, rng), box(C, 4, rng) {
    // Refinements start at the reference geometry; the instance prior is 0.01.
    for (auto* t : {&points.weight, &box.weight})
      for (auto& v : t->mutable_data()) v = T(0);
    instance.bias.mutable_data()[0] = static_cast<T>(-std::log(99.0));
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) const {
    norm.collect(prefix + ".norm", ps);
    instance.collect(prefix + ".instance", ps);
    chars.collect(prefix + ".chars", ps);
    points.collect(prefix + ".points", ps);
    box.collect(prefix + ".box", ps);
  }
};

template <class T>
struct HeadOutputs {
  Tensor<T> instance_logits;  // [K]
  Tensor<T> char_logits;      // [K x n x V]
  Tensor<T> center_points;    // [K x n x 2]
  Tensor<T> boxes;            // [K x 4] (cx, cy, w, h)
};

/// decoded[K x n x C]; sampled[K x n x 2] and reference_box[K x 4] are the
/// proposal geometry the point and box heads refine in logit space.
template <class T>
HeadOutputs<T> prediction_heads(const Tensor<T>& decoded, const Tensor<T>& sampled, const Tensor<T>& reference_box,
                                const PredictionHeads<T>& h) {
  const std::size_t K = decoded.size(0);
  const T lo = static_cast<T>(kLogitClamp), hi = static_cast<T>(1.0 - kLogitClamp);
  Tensor<T> d = h.norm(decoded);
  Tensor<T> pooled = mean_middle(d);
  HeadOutputs<T> o;
  o.instance_logits = reshape(h.instance(pooled), {K});
  o.char_logits = h.chars(d);
  o.center_points = sigmoid(add(logit(clamp(sampled, lo, hi)), h.points(d)));
  o.boxes = sigmoid(add(logit(clamp(reference_box, lo, hi)), h.box(pooled)));
  return o;
}

// ---------------------------------------------------------------------------

template <class T>
struct SpotterOutput {
  HeadOutputs<T> heads;
  Tensor<T> token_logits;             // [N] proposal scores before sigmoid
  Tensor<T> token_geometry;           // [N x 8] control points or [N x 4] boxes
  std::vector<double> token_centers;  // [N x 2]
  ProposalSet<T> proposals;

  std::size_t K() const { return proposals.K; }
  std::vector<double> instance_scores() const {
    std::vector<double> s;
    for (T v : heads.instance_logits.data()) s.push_back(sigmoid_value(static_cast<double>(v)));
    return s;
  }
};

template <class T>
struct Spotter {
  SpotterConfig config;
  Backbone<T> backbone;
  Conv2d<T> down;  // F5 -> F6
  std::vector<EncoderBlock<T>> encoder;
  AffineLayer<T> score;
  Mlp<T> offsets;
  Mlp<T> query_pe;
  AffineLayer<T> query_sample;
  std::vector<DecoderLayer<T>> decoder;
  PredictionHeads<T> heads;
  std::vector<std::array<double, 4>> basis;

  Spotter() = default;
  Spotter(const SpotterConfig& cfg, std::uint64_t seed) : config(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, "spotter.init"));
    const std::size_t C = cfg.channels, H = cfg.hidden();
    backbone = Backbone<T>(C, rng);
    down = Conv2d<T>(C, C, 3, 2, 1, rng);
    for (std::size_t i = 0; i < cfg.encoder_depth; ++i) encoder.emplace_back(C, H, cfg.encoder, rng);
    score = AffineLayer<T>(C, 1, rng);
    score.bias.mutable_data()[0] = static_cast<T>(-std::log(99.0));
    offsets = Mlp<T>({C, C, cfg.proposals == ProposalKind::curve ? std::size_t{8} : std::size_t{4}}, rng);
    for (auto& v : offsets.layers.back().weight.mutable_data()) v *= T(0.1);
    query_pe = Mlp<T>({C, C, C}, rng);
    query_sample = AffineLayer<T>(2 * C, C, rng);
    for (std::size_t i = 0; i < cfg.decoder_depth; ++i) decoder.emplace_back(C, H, rng);
    heads = PredictionHeads<T>(C, cfg.vocab(), rng);
    basis = sampling_basis(cfg.num_points, cfg.tension);
  }

  ParamSet<T> parameters() const {
    ParamSet<T> ps;
    backbone.collect("backbone", ps);
    down.collect("encoder.down", ps);
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].collect("encoder.block" + std::to_string(i), ps);
    score.collect("proposal.score", ps);
    offsets.collect("proposal.offsets", ps);
    query_pe.collect("query.pe", ps);
    query_sample.collect("query.sample", ps);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].collect("decoder.layer" + std::to_string(i), ps);
    heads.collect("head", ps);
    return ps;
  }

  /// Logit-space prior for each token's geometry: its own pixel center, and
  /// for boxes a size of two cells.
  Tensor<T> geometry_prior(const std::vector<LevelSpan>& spans, const std::vector<double>& centers) const {
    const bool curve = config.proposals == ProposalKind::curve;
    const std::size_t N = centers.size() / 2, G = curve ? 8 : 4;
    Buffer<T> d(N * G);
    std::size_t t = 0;
    for (const auto& s : spans)
      for (std::size_t i = 0; i < s.length; ++i, ++t) {
        const double lx = logit_value(centers[2 * t]), ly = logit_value(centers[2 * t + 1]);
        if (curve) {
          for (int j = 0; j < 4; ++j) {
            d[t * 8 + 2 * j] = static_cast<T>(lx);
            d[t * 8 + 2 * j + 1] = static_cast<T>(ly);
          }
        } else {
          d[t * 4] = static_cast<T>(lx);
          d[t * 4 + 1] = static_cast<T>(ly);
          d[t * 4 + 2] = static_cast<T>(logit_value(clamp_unit(std::min(0.9, 2.0 / static_cast<double>(s.width)))));
          d[t * 4 + 3] = static_cast<T>(logit_value(clamp_unit(std::min(0.9, 2.0 / static_cast<double>(s.height)))));
        }
      }
    return Tensor<T>(Shape{N, G}, std::move(d));
  }

  SpotterOutput<T> forward(const Tensor<T>& image) const {
    const std::size_t C = config.channels, K = config.num_proposals, n = config.num_points;
    FeaturePyramid<T> fp = backbone_forward(image, backbone);
    TokenFeatures<T> memory = encoder_stack(build_multilevel_tokens(fp.f3, fp.f4, fp.f5, down), encoder);
    const std::size_t N = memory.count();
    if (K > N) throw ShapeError("K = " + std::to_string(K) + " exceeds token count " + std::to_string(N));

    SpotterOutput<T> out;
    out.token_centers = token_centers(memory.spans);
    out.token_logits = reshape(score(memory.tokens), {N});
    out.token_geometry = sigmoid(add(offsets(memory.tokens), geometry_prior(memory.spans, out.token_centers)));

    ProposalSet<T>& p = out.proposals;
    p.K = K;
    p.n = n;
    p.token_index = select_topk<T>(out.token_logits.data(), K);
    Tensor<T> selected = gather_rows(out.token_geometry, p.token_index);
    Tensor<T> reference_box;
    if (config.proposals == ProposalKind::curve) {
      p.control_points = selected;
    } else {
      p.control_points = matmul(selected, midline_matrix());
      reference_box = selected;
    }
    p.sampled_points = apply_curve_basis(p.control_points, basis);
    if (config.proposals == ProposalKind::curve) {
      Tensor<T> hi = extremum_middle(p.sampled_points, true), lo = extremum_middle(p.sampled_points, false);
      reference_box = concat_last(std::vector<Tensor<T>>{mul_scalar(add(hi, lo), T(0.5)),
                                                         add_scalar(sub(hi, lo), static_cast<T>(config.box_pad))});
    }
    p.scores = sigmoid(gather_rows(out.token_logits, p.token_index));

    // Queries: positional part plus features bilinearly sampled at each point
    // from the stride-4 backbone map and the stride-8 encoder level.
    const auto& s3 = memory.spans.front();
    Tensor<T> level3 = reshape(gather_rows(memory.tokens, iota_indices(s3.start, s3.length)), {s3.height, s3.width, C});
    Tensor<T> flat = reshape(p.sampled_points, {K * n, 2});
    Tensor<T> sampled =
        concat_last(std::vector<Tensor<T>>{bilinear_sample(fp.f2, flat), bilinear_sample(level3, flat)});
    p.queries = add(positional_queries(p.sampled_points, query_pe, C), reshape(query_sample(sampled), {K, n, C}));

    Buffer<T> centers_t(out.token_centers.begin(), out.token_centers.end());
    Tensor<T> memory_pos = positional_encoding(Tensor<T>(Shape{N, 2}, std::move(centers_t)), C);
    Tensor<T> decoded = decoder_forward(p.queries, memory.tokens, memory_pos, decoder);
    out.heads = prediction_heads(decoded, p.sampled_points, reference_box, heads);
    return out;
  }

  SpotterOutput<T> forward(const GrayImage& img) const {
    if (img.width != config.image_size || img.height != config.image_size)
      throw ShapeError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                       ", model expects " + std::to_string(config.image_size));
    return forward(image_tensor<T>(img));
  }

 private:
  static std::vector<std::size_t> iota_indices(std::size_t start, std::size_t count) {
    std::vector<std::size_t> v(count);
    std::iota(v.begin(), v.end(), start);
    return v;
  }

  /// [4 x 8] map from (cx, cy, w, h) to four evenly spaced midline points.
  static Tensor<T> midline_matrix() {
    Buffer<T> m(32, T(0));
    for (int j = 0; j < 4; ++j) {
      m[0 * 8 + 2 * j] = T(1);
      m[2 * 8 + 2 * j] = static_cast<T>(j / 3.0 - 0.5);
      m[1 * 8 + 2 * j + 1] = T(1);
    }
    return Tensor<T>(Shape{4, 8}, std::move(m));
  }
};

/// Per-point argmax, collapse repeats, drop blanks.
inline std::vector<int> ctc_collapse(const std::vector<int>& ids, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int id : ids) {
    if (id != prev && id != blank) out.push_back(id);
    prev = id;
  }
  return out;
}

/// Transcribes logits[n x V] (V = alphabet size + 1, blank last).
template <class T>
std::string transcribe(std::span<const T> logits, std::size_t n, const Alphabet& alphabet) {
  const std::size_t V = alphabet.size() + 1;
  if (logits.size() != n * V) throw ShapeError("transcribe: logits do not match n x (alphabet + 1)");
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * V;
    ids[i] = static_cast<int>(std::max_element(row, row + V) - row);
  }
  return alphabet.decode(ctc_collapse(ids, alphabet.blank()));
}

}  // namespace edgespot
