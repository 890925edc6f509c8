#pragma once

// Set-prediction training loss: Hungarian matching of the K outputs to the
// ground-truth instances, then focal instance classification, per-point
// character cross-entropy and L1 on points and boxes. An auxiliary term
// supervises the per-token proposal scores and geometry.

#include <sstream>

#include "edgespot/annotation.hpp"
#include "edgespot/hungarian.hpp"
#include "edgespot/spotter.hpp"

namespace edgespot {

struct LossWeights {
  double cls = 2.0;
  double chars = 1.0;
  double points = 5.0;
  double box = 2.0;
  double aux = 1.0;  // multiplies the proposal-stage terms (cls and points weights reused)
};

struct LossBreakdown {
  double total = 0, cls = 0, chars = 0, points = 0, box = 0, aux_cls = 0, aux_geometry = 0;
  std::size_t matched = 0;

  std::string str() const {
    std::ostringstream os;
    os << "total=" << total << " cls=" << cls << " chars=" << chars << " points=" << points << " box=" << box
       << " aux_cls=" << aux_cls << " aux_geometry=" << aux_geometry;
    return os.str();
  }
};

template <class T>
struct LossResult {
  Tensor<T> total;
  LossBreakdown terms;
  Assignment matching;  // (ground-truth index, output index)
};

/// Class id for each of n points along an m-character instance. Character j
/// occupies global parameters within 1/(4m) of (j + 0.5)/m; other points are blank.
inline std::vector<int> point_char_targets(const std::vector<int>& ids, std::size_t n, int blank) {
  std::vector<int> out(n, blank);
  const double m = static_cast<double>(ids.size());
  if (ids.empty()) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    const auto j = std::min(ids.size() - 1, static_cast<std::size_t>(t * m));
    if (std::abs(t - (static_cast<double>(j) + 0.5) / m) <= 0.25 / m) out[i] = ids[j];
  }
  return out;
}

namespace detail {

inline double focal_match_cost(double logit, double alpha = 0.25, double gamma = 2.0) {
  const double p = sigmoid_value(logit);
  const double pos = alpha * std::pow(1 - p, gamma) * -std::log(p + 1e-8);
  const double neg = (1 - alpha) * std::pow(p, gamma) * -std::log(1 - p + 1e-8);
  return pos - neg;
}

/// Token -> ground-truth index (or -1). A token is positive for the smallest
/// box containing its center; an instance covering no center takes the
/// nearest free token.
inline std::vector<int> assign_tokens(const std::vector<double>& centers, const SceneAnnotation& truth) {
  const std::size_t N = centers.size() / 2;
  std::vector<int> a(N, -1);
  std::vector<double> best_area(N, std::numeric_limits<double>::infinity());
  std::vector<char> covered(truth.instances.size(), 0);
  for (std::size_t g = 0; g < truth.instances.size(); ++g) {
    const auto c = box_corners(truth.instances[g].bbox);
    const double area = truth.instances[g].bbox[2] * truth.instances[g].bbox[3];
    for (std::size_t t = 0; t < N; ++t) {
      const double x = centers[2 * t], y = centers[2 * t + 1];
      if (x >= c[0] && x <= c[2] && y >= c[1] && y <= c[3] && area < best_area[t]) {
        best_area[t] = area;
        a[t] = static_cast<int>(g);
      }
    }
  }
  for (int v : a)
    if (v >= 0) covered[static_cast<std::size_t>(v)] = 1;
  for (std::size_t g = 0; g < truth.instances.size(); ++g) {
    if (covered[g]) continue;
    const auto& b = truth.instances[g].bbox;
    std::size_t best = N;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < N; ++t) {
      if (a[t] >= 0) continue;
      const double d = std::hypot(centers[2 * t] - b[0], centers[2 * t + 1] - b[1]);
      if (d < bd) {
        bd = d;
        best = t;
      }
    }
    if (best < N) a[best] = static_cast<int>(g);
  }
  return a;
}

template <class T>
Tensor<T> l1_mean(const Tensor<T>& pred, Buffer<T> target) {
  Tensor<T> t(pred.shape(), std::move(target));
  return mean(abs(sub(pred, t)));
}

}  // namespace detail

/// Matching cost [G x K]: 2 focal + 5 mean point L1 + 2 mean box L1.
template <class T>
std::vector<double> matching_cost(const SpotterOutput<T>& out, const std::vector<std::vector<Point2>>& gt_points,
                                  const SceneAnnotation& truth, const LossWeights& w = {}) {
  const std::size_t G = truth.instances.size(), K = out.K(), n = out.proposals.n;
  auto logits = out.heads.instance_logits.data();
  auto pts = out.heads.center_points.data();
  auto boxes = out.heads.boxes.data();
  std::vector<double> cost(G * K);
  for (std::size_t k = 0; k < K; ++k) {
    const double cls = detail::focal_match_cost(static_cast<double>(logits[k]));
    for (std::size_t g = 0; g < G; ++g) {
      double lp = 0;
      for (std::size_t i = 0; i < n; ++i)
        lp += std::abs(pts[(k * n + i) * 2] - gt_points[g][i].x) + std::abs(pts[(k * n + i) * 2 + 1] - gt_points[g][i].y);
      double lb = 0;
      for (int j = 0; j < 4; ++j) lb += std::abs(boxes[k * 4 + j] - truth.instances[g].bbox[j]);
      cost[g * K + k] = w.cls * cls + w.points * lp / (2.0 * n) + w.box * lb / 4.0;
    }
  }
  return cost;
}

template <class T>
LossResult<T> compute_loss(const SpotterOutput<T>& out, const SceneAnnotation& truth, const Alphabet& alphabet,
                           const SpotterConfig& cfg, const LossWeights& w = {}) {
  const std::size_t K = out.K(), n = out.proposals.n, G = truth.instances.size();
  const T one = T(1);
  std::vector<std::vector<Point2>> gt_points;
  for (const auto& inst : truth.instances) gt_points.push_back(sample_curve(inst.control_points, n, cfg.tension));

  LossResult<T> r;
  r.matching = hungarian(matching_cost(out, gt_points, truth, w), G, K);
  r.terms.matched = r.matching.pairs.size();

  std::vector<int> labels(K, 0);
  for (auto [g, k] : r.matching.pairs) labels[k] = 1;
  const T norm = static_cast<T>(std::max<std::size_t>(1, G));
  Tensor<T> cls = mul_scalar(sigmoid_focal_loss(out.heads.instance_logits, labels), one / norm);
  Tensor<T> total = mul_scalar(cls, static_cast<T>(w.cls));
  r.terms.cls = cls.item();

  if (G > 0) {
    std::vector<std::size_t> ks;
    std::vector<int> char_targets;
    Buffer<T> pt_targets, box_targets;
    for (auto [g, k] : r.matching.pairs) {
      ks.push_back(k);
      const auto ids = alphabet.encode(truth.instances[g].transcription);
      const auto pc = point_char_targets(ids, n, alphabet.blank());
      char_targets.insert(char_targets.end(), pc.begin(), pc.end());
      for (const auto& p : gt_points[g]) {
        pt_targets.push_back(static_cast<T>(p.x));
        pt_targets.push_back(static_cast<T>(p.y));
      }
      for (double v : truth.instances[g].bbox) box_targets.push_back(static_cast<T>(v));
    }
    const std::size_t M = ks.size();
    Tensor<T> chars = cross_entropy(reshape(gather_rows(out.heads.char_logits, ks), {M * n, cfg.vocab()}), char_targets);
    Tensor<T> pts = detail::l1_mean(gather_rows(out.heads.center_points, ks), std::move(pt_targets));
    Tensor<T> box = detail::l1_mean(gather_rows(out.heads.boxes, ks), std::move(box_targets));
    r.terms.chars = chars.item();
    r.terms.points = pts.item();
    r.terms.box = box.item();
    total = add(total, add(mul_scalar(chars, static_cast<T>(w.chars)),
                           add(mul_scalar(pts, static_cast<T>(w.points)), mul_scalar(box, static_cast<T>(w.box)))));
  }

  if (w.aux > 0) {
    const auto assign = detail::assign_tokens(out.token_centers, truth);
    std::vector<int> token_labels(assign.size());
    std::vector<std::size_t> pos;
    Buffer<T> geo_targets;
    const bool curve = out.token_geometry.size(1) == 8;
    for (std::size_t t = 0; t < assign.size(); ++t) {
      token_labels[t] = assign[t] >= 0;
      if (assign[t] < 0) continue;
      pos.push_back(t);
      const auto& inst = truth.instances[static_cast<std::size_t>(assign[t])];
      if (curve) {
        for (const auto& p : inst.control_points) {
          geo_targets.push_back(static_cast<T>(p.x));
          geo_targets.push_back(static_cast<T>(p.y));
        }
      } else {
        for (double v : inst.bbox) geo_targets.push_back(static_cast<T>(v));
      }
    }
    const T pnorm = static_cast<T>(std::max<std::size_t>(1, pos.size()));
    Tensor<T> aux_cls = mul_scalar(sigmoid_focal_loss(out.token_logits, token_labels), one / pnorm);
    r.terms.aux_cls = aux_cls.item();
    Tensor<T> aux = mul_scalar(aux_cls, static_cast<T>(w.cls));
    if (!pos.empty()) {
      Tensor<T> geo = detail::l1_mean(gather_rows(out.token_geometry, pos), std::move(geo_targets));
      r.terms.aux_geometry = geo.item();
      aux = add(aux, mul_scalar(geo, static_cast<T>(w.points)));
    }
    total = add(total, mul_scalar(aux, static_cast<T>(w.aux)));
  }

  r.total = total;
  r.terms.total = static_cast<double>(total.item());
  if (!std::isfinite(r.terms.total)) throw NumericError("non-finite loss: " + r.terms.str());
  return r;
}

}  // namespace edgespot
