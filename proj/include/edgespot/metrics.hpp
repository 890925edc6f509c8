#pragma once

// Detection and end-to-end recognition metrics: greedy score-ordered IoU
// matching, micro-averaged precision/recall, harmonic means.

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgespot/annotation.hpp"

namespace edgespot {

/// IoU of corner boxes (x0, y0, x1, y1); degenerate boxes give 0.
inline double iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = iw * ih;
  const double ua = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
  const double ub = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
  const double uni = ua + ub - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double harmonic_mean(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

struct Detection {
  double score = 0;
  Box box{};  // (cx, cy, w, h)
  std::string text;
  std::vector<Point2> points;
};

/// Prediction order used for matching: descending score, then list index.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  return order;
}

/// Greedy matching: each prediction in score order takes the unmatched
/// ground truth of highest IoU above the threshold (and equal text when
/// required). Returns (prediction, ground truth) pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> match_detections(const std::vector<Detection>& preds,
                                                                         const std::vector<TextInstance>& gts,
                                                                         double iou_thresh = 0.5,
                                                                         bool require_text_match = false) {
  std::vector<char> used(gts.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t p : score_order(preds)) {
    const auto pc = box_corners(preds[p].box);
    std::size_t best = gts.size();
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      if (require_text_match && preds[p].text != gts[g].transcription) continue;
      const double v = iou(pc, box_corners(gts[g].bbox));
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best < gts.size()) {
      used[best] = 1;
      out.emplace_back(p, best);
    }
  }
  return out;
}

/// Suppresses lower-scored detections whose IoU with a kept one exceeds thresh.
inline std::vector<Detection> non_max_suppression(const std::vector<Detection>& dets, double thresh = 0.5) {
  std::vector<Detection> kept;
  for (std::size_t i : score_order(dets)) {
    const auto c = box_corners(dets[i].box);
    bool keep = true;
    for (const auto& k : kept)
      if (iou(c, box_corners(k.box)) > thresh) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(dets[i]);
  }
  return kept;
}

struct ImageCounts {
  std::string image_id;
  std::size_t predictions = 0;
  std::size_t ground_truth = 0;
  std::vector<std::pair<std::size_t, std::size_t>> detection_matches;
  std::vector<std::pair<std::size_t, std::size_t>> recognition_matches;
};

inline ImageCounts count_image(const std::string& id, const std::vector<Detection>& preds,
                               const std::vector<TextInstance>& gts, double iou_thresh = 0.5) {
  return {id, preds.size(), gts.size(), match_detections(preds, gts, iou_thresh, false),
          match_detections(preds, gts, iou_thresh, true)};
}

struct EvalResult {
  double precision = 0, recall = 0, f1 = 0;
  double rec_precision = 0, rec_recall = 0, hmean = 0;
  std::size_t predictions = 0, ground_truth = 0, detection_tp = 0, recognition_tp = 0;
  std::vector<ImageCounts> images;

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& im : images)
      per.push_back({{"image_id", im.image_id},
                     {"predictions", im.predictions},
                     {"ground_truth", im.ground_truth},
                     {"detection_matches", im.detection_matches},
                     {"recognition_matches", im.recognition_matches}});
    return {{"detection", {{"precision", precision}, {"recall", recall}, {"f1", f1}}},
            {"recognition", {{"precision", rec_precision}, {"recall", rec_recall}, {"hmean", hmean}}},
            {"counts",
             {{"predictions", predictions},
              {"ground_truth", ground_truth},
              {"detection_tp", detection_tp},
              {"recognition_tp", recognition_tp}}},
            {"images", per}};
  }

  std::string csv_header() const { return "precision,recall,f1,rec_precision,rec_recall,hmean"; }
  std::string csv_row() const {
    nlohmann::json row = {precision, recall, f1, rec_precision, rec_recall, hmean};
    std::string s;
    for (std::size_t i = 0; i < row.size(); ++i) s += (i ? "," : "") + row[i].dump();
    return s;
  }
};

/// Micro-averaged over every instance of every image. No predictions gives
/// precision 0 by convention.
inline EvalResult end_to_end_metrics(std::vector<ImageCounts> images) {
  if (images.empty()) throw std::invalid_argument("evaluation over an empty dataset");
  EvalResult r;
  for (const auto& im : images) {
    r.predictions += im.predictions;
    r.ground_truth += im.ground_truth;
    r.detection_tp += im.detection_matches.size();
    r.recognition_tp += im.recognition_matches.size();
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  r.precision = ratio(r.detection_tp, r.predictions);
  r.recall = ratio(r.detection_tp, r.ground_truth);
  r.f1 = harmonic_mean(r.precision, r.recall);
  r.rec_precision = ratio(r.recognition_tp, r.predictions);
  r.rec_recall = ratio(r.recognition_tp, r.ground_truth);
  r.hmean = harmonic_mean(r.rec_precision, r.rec_recall);
  r.images = std::move(images);
  return r;
}

}  // namespace edgespot
