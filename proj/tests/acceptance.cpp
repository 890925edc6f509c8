// Acceptance runner. `acceptance` runs every criterion; `acceptance c3 c5`
// runs a subset. One "PASS"/"FAIL" line per criterion goes to stdout,
// progress to stderr. Exit status is 1 when any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <unistd.h>

#include "edgespot/cli.hpp"
#include "edgespot/grad_check.hpp"

using namespace edgespot;
namespace fs = std::filesystem;
using Td = Tensor<double>;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

Td random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Td(std::move(shape), std::move(d));
}

std::vector<Td> tensors_of(const ParamSet<double>& ps) {
  std::vector<Td> v;
  for (const auto& [_, t] : ps.items) v.push_back(t);
  return v;
}

fs::path scratch(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("edgespot_accept_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

SpotterConfig probe_config() {
  SpotterConfig c;
  c.image_size = 64;
  c.channels = 8;
  c.encoder_depth = 1;
  c.decoder_depth = 1;
  c.num_proposals = 6;
  c.num_points = 5;
  return c;
}

SceneConfig probe_scenes() {
  SceneConfig c = small_scene_config();
  c.image_size = 64;
  c.min_instances = 1;
  c.max_instances = 2;
  c.min_glyph_height = 10;
  c.max_glyph_height = 14;
  c.min_chars = 2;
  c.max_chars = 3;
  return c;
}

// ---------------------------------------------------------------------------
// C1: finite differences over every differentiable op and the full model.

Outcome c1_gradients() {
  const auto t0 = Clock::now();
  struct Case {
    std::string name;
    std::function<Td(const Td&)> op;
    Shape shape;
    double lo, hi;
  };
  const Td other = random_tensor({3, 4}, 99), row = random_tensor({4}, 98), rows = random_tensor({3}, 97);
  const Td w = random_tensor({4, 5}, 96), wt = random_tensor({5, 4}, 95), feat = random_tensor({4, 5, 3}, 94);
  const Td gamma = random_tensor({4}, 93, 0.5, 1.5), beta = random_tensor({4}, 92);
  Rng prng(91);
  const Mlp<double> mlp({4, 6, 4}, prng);
  const Conv2d<double> conv(2, 3, 3, 2, 1, prng);
  const EMMixerParams<double> em(4, prng);
  const SoftmaxAttentionParams<double> sa(4, prng);
  const EncoderBlock<double> blk_em(4, 8, MixerKind::efficient, prng), blk_sa(4, 8, MixerKind::softmax, prng);
  const std::vector<LevelSpan> spans = {{3, 0, 2, 1, 2}, {4, 2, 1, 1, 1}};

  const std::vector<Case> cases = {
      {"add", [&](const Td& x) { return add(x, other); }, {3, 4}, -1, 1},
      {"add_broadcast", [&](const Td& x) { return add(x, row); }, {3, 4}, -1, 1},
      {"sub", [&](const Td& x) { return sub(other, x); }, {3, 4}, -1, 1},
      {"mul", [&](const Td& x) { return mul(x, other); }, {3, 4}, -1, 1},
      {"mul_broadcast", [&](const Td& x) { return mul(other, x); }, {4}, -1, 1},
      {"scale_rows", [&](const Td& x) { return scale_rows(x, rows); }, {3, 4}, -1, 1},
      {"scale_rows_factor", [&](const Td& x) { return scale_rows(other, x); }, {3}, -1, 1},
      {"mul_scalar", [](const Td& x) { return mul_scalar(x, 2.5); }, {3, 4}, -1, 1},
      {"add_scalar", [](const Td& x) { return square(add_scalar(x, 0.3)); }, {3, 4}, -1, 1},
      {"neg", [](const Td& x) { return neg(x); }, {3, 4}, -1, 1},
      {"square", [](const Td& x) { return square(x); }, {3, 4}, -2, 2},
      {"abs", [](const Td& x) { return abs(x); }, {3, 4}, 0.2, 2},
      {"exp", [](const Td& x) { return exp(x); }, {3, 4}, -1, 1},
      {"log", [](const Td& x) { return log(x); }, {3, 4}, 0.5, 2},
      {"sin", [](const Td& x) { return sin(x); }, {3, 4}, -3, 3},
      {"cos", [](const Td& x) { return cos(x); }, {3, 4}, -3, 3},
      {"sigmoid", [](const Td& x) { return sigmoid(x); }, {3, 4}, -3, 3},
      {"logit", [](const Td& x) { return logit(x); }, {3, 4}, 0.1, 0.9},
      {"clamp", [](const Td& x) { return clamp(x, -0.5, 0.5); }, {3, 4}, -0.45, 0.45},
      {"softplus", [](const Td& x) { return softplus(x); }, {3, 4}, -3, 3},
      {"gelu", [](const Td& x) { return gelu(x); }, {3, 4}, -3, 3},
      {"relu", [](const Td& x) { return relu(x); }, {3, 4}, 0.1, 1},
      {"sum", [](const Td& x) { return sum(square(x)); }, {3, 4}, -1, 1},
      {"mean", [](const Td& x) { return mean(square(x)); }, {3, 4}, -1, 1},
      {"reshape", [](const Td& x) { return reshape(x, {2, 6}); }, {3, 4}, -1, 1},
      {"mean_middle", [](const Td& x) { return mean_middle(x); }, {2, 3, 2}, -1, 1},
      {"max_middle", [](const Td& x) { return extremum_middle(x, true); }, {2, 3, 2}, -1, 1},
      {"min_middle", [](const Td& x) { return extremum_middle(x, false); }, {2, 3, 2}, -1, 1},
      {"gather_rows", [](const Td& x) { return gather_rows(x, {2, 0, 2}); }, {3, 4}, -1, 1},
      {"concat_rows", [&](const Td& x) { return concat_rows(std::vector<Td>{x, other, x}); }, {3, 4}, -1, 1},
      {"concat_last", [&](const Td& x) { return concat_last(std::vector<Td>{other, x}); }, {3, 4}, -1, 1},
      {"repeat_middle", [](const Td& x) { return repeat_middle(x, 3); }, {3, 4}, -1, 1},
      {"swap_leading", [](const Td& x) { return swap_leading(x); }, {2, 3, 2}, -1, 1},
      {"matmul", [&](const Td& x) { return matmul(x, w); }, {3, 4}, -1, 1},
      {"matmul_rhs", [&](const Td& x) { return matmul(other, x); }, {4, 3}, -1, 1},
      {"matmul_trans", [&](const Td& x) { return matmul(x, wt, true); }, {3, 4}, -1, 1},
      {"matmul_trans_rhs", [&](const Td& x) { return matmul(other, x, true); }, {2, 4}, -1, 1},
      {"bmm", [&](const Td& x) { return bmm(x, reshape(other, {2, 2, 3})); }, {2, 3, 2}, -1, 1},
      {"bmm_trans", [&](const Td& x) { return bmm(x, reshape(other, {2, 3, 2}), true); }, {2, 3, 2}, -1, 1},
      {"softmax", [](const Td& x) { return softmax_last(x, 0.7); }, {3, 4}, -2, 2},
      {"im2col", [](const Td& x) { return im2col(x, 3, 2, 1); }, {2, 3, 2}, -1, 1},
      {"layer_norm", [&](const Td& x) { return layer_norm(x, gamma, beta); }, {3, 4}, -1, 1},
      {"mlp", [&](const Td& x) { return mlp(x); }, {3, 4}, -1, 1},
      {"conv2d", [&](const Td& x) { return conv(x); }, {5, 4, 2}, -1, 1},
      {"bilinear_features",
       [](const Td& x) { return bilinear_sample(x, Td({3, 2}, {0.31, 0.47, 0.83, 0.12, 0.55, 0.66})); }, {2, 2, 3}, -1, 1},
      {"bilinear_points", [&](const Td& x) { return bilinear_sample(feat, x); }, {6, 2}, 0.05, 0.95},
      {"cross_entropy", [](const Td& x) { return cross_entropy(x, {1, 3, 0}); }, {3, 4}, -2, 2},
      {"focal", [](const Td& x) { return sigmoid_focal_loss(x, {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 0}); }, {12}, -2, 2},
      {"attention", [&](const Td& x) { return attention(x, reshape(other, {1, 3, 4}), x); }, {1, 3, 4}, -1, 1},
      {"positional_encoding", [](const Td& x) { return positional_encoding(x, 8); }, {3, 2}, 0.05, 0.95},
      {"curve_basis", [](const Td& x) { return apply_curve_basis(x, sampling_basis(7)); }, {2, 8}, 0.05, 0.95},
      {"em_mixer", [&](const Td& x) { return efficient_mixer(x, em).first; }, {5, 4}, -1, 1},
      {"softmax_attention", [&](const Td& x) { return softmax_self_attention(x, sa); }, {5, 4}, -1, 1},
      {"emt_block", [&](const Td& x) { return emt_block(TokenFeatures<double>{x, spans}, blk_em).tokens; }, {3, 4}, -1, 1},
      {"emt_block_softmax",
       [&](const Td& x) { return emt_block(TokenFeatures<double>{x, spans}, blk_sa).tokens; }, {3, 4}, -1, 1},
  };

  double worst_op = 0;
  std::string worst_name, failures;
  std::size_t n_checks = 0;
  auto note = [&](const std::string& name, const GradCheckReport& r) {
    ++n_checks;
    if (r.max_relative_error > worst_op) worst_op = r.max_relative_error, worst_name = name;
    if (!r.passed) failures += " " + name + "=" + fmt(r.max_relative_error);
  };
  for (const auto& c : cases)
    note(c.name, gradient_check_op(c.op, random_tensor(c.shape, std::hash<std::string>{}(c.name), c.lo, c.hi)));

  // Parameter gradients of the layered modules.
  {
    const Td x = random_tensor({3, 4}, 7);
    ParamSet<double> ps;
    mlp.collect("mlp", ps);
    note("mlp.params", gradient_check([&] { return sum(square(mlp(x))); }, tensors_of(ps)));
  }
  {
    const Td x = random_tensor({5, 4, 2}, 8);
    ParamSet<double> ps;
    conv.collect("conv", ps);
    note("conv2d.params", gradient_check([&] { return sum(square(conv(x))); }, tensors_of(ps)));
  }
  {
    const Td x = random_tensor({5, 4}, 9);
    ParamSet<double> ps;
    em.collect("em", ps);
    note("em_mixer.params", gradient_check([&] { return sum(square(efficient_mixer(x, em).first)); }, tensors_of(ps)));
  }
  {
    const Td x = random_tensor({3, 4}, 10);
    ParamSet<double> ps;
    blk_em.collect("blk", ps);
    note("emt_block.params",
         gradient_check([&] { return sum(square(emt_block(TokenFeatures<double>{x, spans}, blk_em).tokens)); },
                        tensors_of(ps)));
  }

  // Full model plus loss, randomly probed parameters.
  double worst_model = 0;
  for (auto kind : {ProposalKind::curve, ProposalKind::box}) {
    SpotterConfig c = probe_config();
    c.proposals = kind;
    Spotter<double> m(c, 21);
    const Scene s = generate_scene(probe_scenes(), 4, Alphabet::standard(), "g");
    const Td img = image_tensor<double>(s.image);
    auto inputs = tensors_of(m.parameters());
    Rng rng(22);
    std::vector<GradProbe> probes;
    while (probes.size() < 20) {
      const auto i = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(inputs.size()) - 1));
      probes.emplace_back(i, static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(inputs[i].numel()) - 1)));
    }
    auto loss = [&] { return compute_loss(m.forward(img), s.annotation, Alphabet::standard(), c).total; };
    const auto rep = gradient_check(loss, inputs, 1e-5, 1e-2, probes);
    worst_model = std::max(worst_model, rep.max_relative_error);
    if (!rep.passed) failures += std::string(" model.") + to_string(kind) + "=" + fmt(rep.max_relative_error);
  }
  const double secs = seconds_since(t0);
  const bool ok = failures.empty() && secs < 120;
  return {ok, std::to_string(n_checks) + " op checks, worst " + worst_name + " " + fmt(worst_op) +
                  " (< 1e-3); model probes worst " + fmt(worst_model) + " (< 1e-2); " + fmt(secs, 3) + " s (< 120)" +
                  (failures.empty() ? "" : "; failed:" + failures)};
}

// ---------------------------------------------------------------------------
// C2: permuting tokens permutes the mixer output.

Outcome c2_equivariance() {
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto N = static_cast<std::size_t>(rng.integer(2, 64));
    const std::size_t C = std::size_t{4} << rng.integer(0, 2);
    Rng prng(1000 + static_cast<std::uint64_t>(trial));
    EMMixerParams<double> p(C, prng);
    const Td x = random_tensor({N, C}, 5000 + static_cast<std::uint64_t>(trial), -2, 2);
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = N; i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
    NoGradGuard ng;
    const auto y = efficient_mixer(x, p).first;
    const auto yp = efficient_mixer(gather_rows(x, perm), p).first;
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t c = 0; c < C; ++c) worst = std::max(worst, std::abs(yp.at(r * C + c) - y.at(perm[r] * C + c)));
  }
  return {worst < 1e-6, "100 cases, max |f(Px) - P f(x)| = " + fmt(worst) + " (< 1e-6)"};
}

// ---------------------------------------------------------------------------
// C3: timing slopes plus the buffer-size trace.

Outcome c3_complexity() {
  const auto t0 = Clock::now();
  BenchConfig cfg;  // N = 1k, 2k, 4k, 8k; C = 64; 30 reps
  cfg.validate();
  const auto recs = run_bench(cfg);
  const double em = loglog_slope(recs, "em"), sm = loglog_slope(recs, "softmax");

  // Structural: the largest buffer the mixer creates is N x C, never N x N.
  bool structural = true;
  std::string shapes;
  Rng rng(3);
  EMMixerParams<float> p(cfg.channels, rng);
  for (std::size_t N : cfg.sizes) {
    NoGradGuard ng;
    auto [y, trace] = efficient_mixer(Tensor<float>::full({N, cfg.channels}, 0.01f), p);
    structural &= trace.largest_intermediate <= N * cfg.channels && trace.largest_intermediate < N * N;
    shapes += " " + std::to_string(trace.largest_intermediate);
  }
  const double secs = seconds_since(t0);
  const bool ok = em >= 0.8 && em <= 1.3 && sm >= 1.7 && sm <= 2.3 && structural && secs < 300;
  return {ok, "em slope " + fmt(em, 3) + " [0.8, 1.3]; softmax slope " + fmt(sm, 3) +
                  " [1.7, 2.3]; largest em buffer (elements)" + shapes + (structural ? " <= N*C" : " EXCEEDS N*C") +
                  "; " + fmt(secs, 3) + " s (< 300)"};
}

// ---------------------------------------------------------------------------
// C4: spline identities.

Outcome c4_splines() {
  Rng rng(4);
  double unity = 0, interp = 0, c1 = 0, affine = 0, ident = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto w = catrom_basis(rng.uniform(), kDefaultTension);
    unity = std::max(unity, std::abs(w[0] + w[1] + w[2] + w[3] - 1.0));
    const auto cw = chained_weights(rng.uniform(), kDefaultTension);
    unity = std::max(unity, std::abs(cw[0] + cw[1] + cw[2] + cw[3] - 1.0));
  }
  for (int i = 0; i < 1000; ++i) {
    ControlPointSet c;
    for (auto& p : c) p = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    const auto s = sample_curve(c, 4);  // global parameters 0, 1/3, 2/3, 1
    for (int j = 0; j < 4; ++j) interp = std::max(interp, std::hypot(s[j].x - c[j].x, s[j].y - c[j].y));

    // The tangent at interior point j is tension * (c[j+1] - c[j-1]) per unit
    // of local parameter, three local units per unit of t.
    for (int j = 1; j <= 2; ++j) {
      const Point2 expect{3 * kDefaultTension * (c[j + 1].x - c[j - 1].x), 3 * kDefaultTension * (c[j + 1].y - c[j - 1].y)};
      const Point2 left = segment_derivative(c, j - 1, 1.0), right = segment_derivative(c, j, 0.0);
      c1 = std::max({c1, std::hypot(left.x - right.x, left.y - right.y), std::hypot(left.x - expect.x, left.y - expect.y),
                     std::hypot(right.x - expect.x, right.y - expect.y)});
    }

    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), cc = rng.uniform(-2, 2), d = rng.uniform(-2, 2);
    const double tx = rng.uniform(-1, 1), ty = rng.uniform(-1, 1);
    ControlPointSet m;
    for (int j = 0; j < 4; ++j) m[j] = {a * c[j].x + b * c[j].y + tx, cc * c[j].x + d * c[j].y + ty};
    const auto s25 = sample_curve(c, 25), m25 = sample_curve(m, 25);
    for (std::size_t k = 0; k < s25.size(); ++k)
      affine = std::max(affine, std::hypot(m25[k].x - (a * s25[k].x + b * s25[k].y + tx),
                                           m25[k].y - (cc * s25[k].x + d * s25[k].y + ty)));

    const Point2 px{rng.uniform(0.001, 0.999), rng.uniform(0.001, 0.999)};
    for (const auto& q : predict_control_points(px, {})) ident = std::max({ident, std::abs(q.x - px.x), std::abs(q.y - px.y)});
  }
  const bool ok = unity < 1e-12 && interp < 1e-9 && c1 < 1e-6 && affine < 1e-9 && ident < 1e-12;
  return {ok, "unity " + fmt(unity) + " (< 1e-12); interpolation " + fmt(interp) + " (< 1e-9); C1 " + fmt(c1) +
                  " (< 1e-6); affine " + fmt(affine) + " (< 1e-9); zero-offset identity " + fmt(ident) + " (< 1e-12)"};
}

// ---------------------------------------------------------------------------
// C5: Hungarian matcher against exhaustive enumeration.

Outcome c5_matching() {
  Rng rng(5);
  int mismatches = 0;
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto targets = static_cast<std::size_t>(rng.integer(1, 3));
    const auto proposals = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(targets), 6));
    const bool dyadic = trial % 2 == 0;  // sums of multiples of 1/64 are exact
    std::vector<double> cost(proposals * targets);
    for (auto& c : cost) c = dyadic ? static_cast<double>(rng.integer(0, 640)) / 64.0 : rng.uniform(-2, 5);
    const auto a = hungarian(cost, proposals, targets);

    std::vector<std::size_t> pick(proposals);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0;
      for (std::size_t t = 0; t < targets; ++t) s += cost[pick[t] * targets + t];
      best = std::min(best, s);
    } while (std::next_permutation(pick.begin(), pick.end()));

    double s = 0;
    std::vector<char> used(proposals, 0);
    bool valid = a.pairs.size() == targets;
    for (auto [r, c] : a.pairs) {
      valid &= r < proposals && c < targets && !used[r]++;
      if (valid) s += cost[r * targets + c];
    }
    const double err = std::abs(s - best);
    worst = std::max(worst, err);
    if (!valid || (dyadic ? s != best : err > 1e-12)) ++mismatches;
  }
  return {mismatches == 0, "1000 instances (<= 6 proposals, <= 3 targets), " + std::to_string(mismatches) +
                               " disagreements, worst cost gap " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// C6: train on 8 scenes at default head sizes (K = 100, n = 25), then evaluate on them.

Outcome c6_end_to_end() {
  const auto t0 = Clock::now();
  const auto root = scratch("c6");
  GenerateOptions g;
  g.out_dir = root / "data";
  g.count = 8;
  g.seed = 7;
  g.preset = "small";
  cmd_generate(g);

  TrainOptions t;
  t.data_dir = g.out_dir;
  t.out_dir = root / "train";
  t.steps = 2000;
  t.seed = 0;
  const SpotterConfig cfg = resolve_spotter_config(t, small_scene_config().image_size);
  const bool defaults = cfg.num_proposals == 100 && cfg.num_points == 25 && Alphabet::standard().size() == 96;
  std::cerr << "  c6: training 2000 steps on 8 scenes\n";
  cmd_train(t);

  std::map<std::size_t, double> loss;
  std::istringstream log(slurp(t.out_dir / "train_log.jsonl"));
  for (std::string line; std::getline(log, line);) {
    const auto j = nlohmann::json::parse(line);
    loss[j.at("step").get<std::size_t>()] = j.at("loss").get<double>();
  }
  const double l10 = loss.at(10), lend = loss.at(2000), ratio = lend / l10;

  EvalOptions e;
  e.data_dir = g.out_dir;
  e.checkpoint = t.out_dir / "model.ckpt";
  e.out_dir = root / "eval";
  const auto res = cmd_eval(e);
  const double f1 = res.at("detection").at("f1"), h = res.at("recognition").at("hmean");
  const double secs = seconds_since(t0);
  fs::remove_all(root);
  const bool ok = defaults && ratio < 0.1 && f1 >= 0.9 && h >= 0.6 && secs < 1800;
  return {ok, std::string("K=100 n=25 classes=96 ") + (defaults ? "ok" : "WRONG") + "; loss step10 " + fmt(l10) +
                  " -> step2000 " + fmt(lend) + " (ratio " + fmt(ratio, 3) + " < 0.1); F1 " + fmt(f1, 3) +
                  " (>= 0.9); H " + fmt(h, 3) + " (>= 0.6); " + fmt(secs / 60, 3) + " min (< 30)"};
}

// ---------------------------------------------------------------------------
// C7: full >= FSCRS-only >= box baseline on detection F1, majority of seeds.

Outcome c7_ablation() {
  constexpr std::size_t kSteps = 800;
  const auto scenes = generate_scenes(small_scene_config(), 50, 1000);
  const auto held_out = generate_scenes(small_scene_config(), 20, 2000);
  struct Variant {
    const char* name;
    MixerKind mixer;
    ProposalKind proposals;
  };
  const Variant variants[] = {{"full", MixerKind::efficient, ProposalKind::curve},
                              {"fscrs", MixerKind::softmax, ProposalKind::curve},
                              {"baseline", MixerKind::softmax, ProposalKind::box}};
  int ordered = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    double f1[3], f1_held[3];
    for (int v = 0; v < 3; ++v) {
      SpotterConfig mc;
      mc.encoder = variants[v].mixer;
      mc.proposals = variants[v].proposals;
      TrainConfig tc;
      tc.steps = kSteps;
      tc.seed = seed;
      Trainer tr(mc, tc, scenes);
      for (std::size_t i = 0; i < kSteps; ++i) tr.run_step();
      f1[v] = evaluate(tr.model(), scenes).f1;
      f1_held[v] = evaluate(tr.model(), held_out).f1;
      std::cerr << "  c7: seed " << seed << " " << variants[v].name << " F1 " << f1[v] << " held-out " << f1_held[v]
                << "\n";
    }
    const bool ok = f1[0] >= f1[1] && f1[1] >= f1[2];
    ordered += ok;
    detail += " seed" + std::to_string(seed) + " " + fmt(f1[0], 3) + "/" + fmt(f1[1], 3) + "/" + fmt(f1[2], 3) +
              (ok ? "" : "(inverted)") + " held-out " + fmt(f1_held[0], 3) + "/" + fmt(f1_held[1], 3) + "/" +
              fmt(f1_held[2], 3) + ";";
  }
  return {ordered >= 2, std::to_string(ordered) + "/3 seeds ordered full>=fscrs>=baseline (need 2);" + detail};
}

// ---------------------------------------------------------------------------
// C8: metric identities.

Outcome c8_metrics() {
  const double f1 = harmonic_mean(0.8, 0.5);
  const double i = iou({0, 0, 2, 2}, {1, 1, 3, 3});
  // Pipeline case with P = 4/5 and R = 4/8: five predictions, four land on
  // separate truths, eight truths in all.
  std::vector<TextInstance> gt;
  for (int k = 0; k < 8; ++k) gt.push_back({{}, "w", {0.1 + 0.11 * k, 0.5, 0.08, 0.08}, 10});
  std::vector<Detection> pred;
  for (int k = 0; k < 4; ++k) pred.push_back({0.9, gt[static_cast<std::size_t>(2 * k)].bbox, "w", {}});
  pred.push_back({0.8, {0.5, 0.1, 0.05, 0.05}, "w", {}});
  const auto r = end_to_end_metrics({count_image("x", pred, gt)});
  const bool ok = std::abs(f1 - 0.6154) <= 1e-4 && std::abs(f1 - 8.0 / 13.0) <= 1e-12 &&
                  std::abs(i - 1.0 / 7.0) <= 1e-12 && std::abs(r.precision - 0.8) <= 1e-12 &&
                  std::abs(r.recall - 0.5) <= 1e-12 && std::abs(r.f1 - 0.6154) <= 1e-4;
  return {ok, "F1(0.8, 0.5) = " + fmt(f1, 10) + " (0.6154 +- 1e-4); IoU = " + fmt(i, 16) + " (1/7 +- 1e-12); matched P " +
                  fmt(r.precision) + " R " + fmt(r.recall) + " F1 " + fmt(r.f1, 6)};
}

// ---------------------------------------------------------------------------
// C9: repeated generate/train/eval give identical bytes.

Outcome c9_determinism() {
  const auto root = scratch("c9");
  std::vector<std::string> differ;
  std::string digest[2][4];
  for (int run = 0; run < 2; ++run) {
    const auto dir = root / ("run" + std::to_string(run));
    GenerateOptions g;
    g.out_dir = dir / "data";
    g.count = 4;
    g.seed = 11;
    g.preset = "small";
    cmd_generate(g);
    TrainOptions t;
    t.data_dir = g.out_dir;
    t.out_dir = dir / "train";
    t.steps = 20;
    t.seed = 3;
    cmd_train(t);
    EvalOptions e;
    e.data_dir = g.out_dir;
    e.checkpoint = t.out_dir / "model.ckpt";
    e.out_dir = dir / "eval";
    e.score_threshold = 0.0;  // an untrained model scores low; keep its detections in play
    cmd_eval(e);
    std::string images;
    for (const auto& f : fs::directory_iterator(g.out_dir / "images")) images += f.path().filename().string() + slurp(f.path());
    digest[run][0] = slurp(g.out_dir / "annotations.jsonl") + images;
    digest[run][1] = slurp(t.out_dir / "train_log.jsonl");
    digest[run][2] = slurp(t.out_dir / "model.ckpt");
    digest[run][3] = slurp(e.out_dir / "eval.json");
  }
  const char* names[] = {"dataset", "loss log", "checkpoint", "metrics"};
  for (int k = 0; k < 4; ++k)
    if (digest[0][k] != digest[1][k] || digest[0][k].empty()) differ.push_back(names[k]);
  fs::remove_all(root);
  std::string d;
  for (const auto& s : differ) d += " " + s;
  return {differ.empty(), differ.empty() ? "dataset, loss log, checkpoint and metrics JSON byte-identical across reruns"
                                         : "differs or empty:" + d};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::pair<const char*, Outcome (*)()>>> all = {
      {"c1", {"gradient suite", c1_gradients}},       {"c2", {"EM permutation equivariance", c2_equivariance}},
      {"c3", {"complexity slopes", c3_complexity}},   {"c4", {"spline suite", c4_splines}},
      {"c5", {"matching oracle", c5_matching}},       {"c6", {"end-to-end surrogate", c6_end_to_end}},
      {"c7", {"ablation ordering", c7_ablation}},     {"c8", {"metric identities", c8_metrics}},
      {"c9", {"determinism", c9_determinism}},
  };
  std::vector<std::string> want(argv + 1, argv + argc);
  for (const auto& w : want)
    if (std::none_of(all.begin(), all.end(), [&](const auto& a) { return a.first == w; })) {
      std::cerr << "unknown criterion '" << w << "' (c1..c9)\n";
      return 2;
    }
  int failed = 0;
  for (const auto& [id, entry] : all) {
    if (!want.empty() && std::find(want.begin(), want.end(), id) == want.end()) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << entry.first << ": " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
