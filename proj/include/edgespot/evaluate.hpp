#pragma once

// Model outputs -> scored detections -> dataset metrics and overlays.

#include "edgespot/metrics.hpp"
#include "edgespot/spotter.hpp"
#include "edgespot/synth.hpp"

namespace edgespot {

struct DecodeOptions {
  double score_threshold = 0.5;
  double nms_iou = 0.5;  // <= 0 disables suppression
};

template <class T>
std::vector<Detection> decode_detections(const SpotterOutput<T>& out, const Alphabet& alphabet,
                                         const DecodeOptions& opt = {}) {
  const std::size_t K = out.K(), n = out.proposals.n, V = alphabet.size() + 1;
  const auto scores = out.instance_scores();
  auto boxes = out.heads.boxes.data();
  auto pts = out.heads.center_points.data();
  auto logits = out.heads.char_logits.data();
  std::vector<Detection> dets;
  for (std::size_t k = 0; k < K; ++k) {
    if (!(scores[k] > opt.score_threshold)) continue;
    Detection d;
    d.score = scores[k];
    for (int j = 0; j < 4; ++j) d.box[j] = static_cast<double>(boxes[k * 4 + j]);
    d.text = transcribe<T>(logits.subspan(k * n * V, n * V), n, alphabet);
    for (std::size_t i = 0; i < n; ++i)
      d.points.push_back({static_cast<double>(pts[(k * n + i) * 2]), static_cast<double>(pts[(k * n + i) * 2 + 1])});
    dets.push_back(std::move(d));
  }
  return opt.nms_iou > 0 ? non_max_suppression(dets, opt.nms_iou) : dets;
}

template <class T>
std::vector<Detection> detect(const Spotter<T>& model, const GrayImage& img, const DecodeOptions& opt = {}) {
  NoGradGuard ng;
  return decode_detections(model.forward(img), Alphabet::standard(), opt);
}

template <class T>
EvalResult evaluate(const Spotter<T>& model, const std::vector<Scene>& scenes, const DecodeOptions& opt = {},
                    std::vector<std::vector<Detection>>* detections = nullptr) {
  if (scenes.empty()) throw std::invalid_argument("evaluation over an empty dataset");
  std::vector<ImageCounts> counts;
  for (const auto& s : scenes) {
    auto dets = detect(model, s.image, opt);
    counts.push_back(count_image(s.annotation.image_id, dets, s.annotation.instances));
    if (detections) detections->push_back(std::move(dets));
  }
  return end_to_end_metrics(std::move(counts));
}

/// Image with predicted centerlines and boxes drawn over it (white on dark
/// images, black on light ones).
inline GrayImage overlay(const GrayImage& img, const std::vector<Detection>& dets) {
  GrayImage out = img;
  double mean = 0;
  for (auto p : img.pixels) mean += p;
  mean /= static_cast<double>(std::max<std::size_t>(1, img.pixels.size()));
  const double ink = mean < 128 ? 255 : 0;
  const double W = static_cast<double>(img.width), H = static_cast<double>(img.height);
  for (const auto& d : dets) {
    const auto c = box_corners(d.box);
    draw_rect(out, c[0] * W, c[1] * H, c[2] * W, c[3] * H, ink);
    for (std::size_t i = 1; i < d.points.size(); ++i)
      draw_line(out, d.points[i - 1].x * W, d.points[i - 1].y * H, d.points[i].x * W, d.points[i].y * H, 1, ink, 0.7);
  }
  return out;
}

}  // namespace edgespot
