#pragma once

// Ground truth for one scene and its JSON form (one object per
// annotations.jsonl line).
//
//   {"image_id": "000003", "seed": 123, "width": 128, "height": 128,
//    "instances": [{"control_points": [[x,y],[x,y],[x,y],[x,y]],
//                   "transcription": "AB7", "bbox": [cx,cy,w,h],
//                   "glyph_height": 14.5}]}
//
// Coordinates are normalized to [0,1]; glyph_height is in pixels.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgespot/catmull_rom.hpp"

namespace edgespot {

/// Axis-aligned box as (cx, cy, w, h).
using Box = std::array<double, 4>;

struct TextInstance {
  ControlPointSet control_points{};
  std::string transcription;
  Box bbox{};
  double glyph_height = 0;

  bool operator==(const TextInstance&) const = default;
};

struct SceneAnnotation {
  std::string image_id;
  std::uint64_t seed = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<TextInstance> instances;

  bool operator==(const SceneAnnotation&) const = default;
};

inline nlohmann::json to_json(const SceneAnnotation& a) {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& t : a.instances) {
    nlohmann::json cps = nlohmann::json::array();
    for (const auto& p : t.control_points) cps.push_back({p.x, p.y});
    inst.push_back({{"control_points", cps},
                    {"transcription", t.transcription},
                    {"bbox", t.bbox},
                    {"glyph_height", t.glyph_height}});
  }
  return {{"image_id", a.image_id}, {"seed", a.seed}, {"width", a.width}, {"height", a.height}, {"instances", inst}};
}

/// Throws nlohmann::json exceptions on missing or mistyped fields.
inline SceneAnnotation annotation_from_json(const nlohmann::json& j) {
  SceneAnnotation a;
  a.image_id = j.at("image_id").get<std::string>();
  a.seed = j.at("seed").get<std::uint64_t>();
  a.width = j.at("width").get<std::size_t>();
  a.height = j.at("height").get<std::size_t>();
  for (const auto& ji : j.at("instances")) {
    TextInstance t;
    const auto& cps = ji.at("control_points");
    if (cps.size() != 4) throw std::invalid_argument("control_points must hold 4 points");
    for (std::size_t k = 0; k < 4; ++k) t.control_points[k] = {cps.at(k).at(0).get<double>(), cps.at(k).at(1).get<double>()};
    t.transcription = ji.at("transcription").get<std::string>();
    t.bbox = ji.at("bbox").get<Box>();
    t.glyph_height = ji.value("glyph_height", 0.0);
    a.instances.push_back(std::move(t));
  }
  return a;
}

/// (cx, cy, w, h) -> (x0, y0, x1, y1).
inline std::array<double, 4> box_corners(const Box& b) {
  return {b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2};
}

}  // namespace edgespot
