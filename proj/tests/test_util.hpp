#pragma once

#include "edgespot/loss.hpp"
#include "edgespot/synth.hpp"

namespace edgespot::fixtures {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(d));
}

// 64 px, narrow and shallow: the full model in f64 runs in milliseconds.
inline SpotterConfig tiny_config() {
  SpotterConfig c;
  c.image_size = 64;
  c.channels = 8;
  c.encoder_depth = 1;
  c.decoder_depth = 1;
  c.num_proposals = 6;
  c.num_points = 5;
  return c;
}

inline SceneConfig tiny_scene_config() {
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

}  // namespace edgespot::fixtures
