#pragma once

// Synthetic panel scenes: strings of stroke glyphs laid along curved
// centerlines, with exact annotations.

#include <bit>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "edgespot/alphabet.hpp"
#include "edgespot/annotation.hpp"
#include "edgespot/image.hpp"
#include "edgespot/rng.hpp"

namespace edgespot {

/// Raised when a configuration cannot be satisfied (e.g. instances do not fit).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Glyphs: each class is a subset of a 16-segment cell.

struct Segment {
  double u0, v0, u1, v1;  // glyph-box coordinates in [0,1], v down
};

inline const std::array<Segment, 16>& glyph_segments() {
  static const std::array<Segment, 16> s = {{
      {0, 0, .5, 0},    // top left
      {.5, 0, 1, 0},    // top right
      {1, 0, 1, .5},    // right upper
      {1, .5, 1, 1},    // right lower
      {1, 1, .5, 1},    // bottom right
      {.5, 1, 0, 1},    // bottom left
      {0, 1, 0, .5},    // left lower
      {0, .5, 0, 0},    // left upper
      {0, .5, .5, .5},  // middle left
      {.5, .5, 1, .5},  // middle right
      {0, 0, .5, .5},   // diagonal to top-left
      {.5, 0, .5, .5},  // centre upper
      {1, 0, .5, .5},   // diagonal to top-right
      {.5, .5, 0, 1},   // diagonal to bottom-left
      {.5, .5, .5, 1},  // centre lower
      {.5, .5, 1, 1},   // diagonal to bottom-right
  }};
  return s;
}

/// Segment masks for `count` classes. The first ten are seven-segment digits;
/// the rest are drawn from a fixed stream, keeping Hamming distance >= 3 to
/// every earlier mask.
inline std::vector<std::uint16_t> glyph_masks(std::size_t count) {
  constexpr std::uint16_t a = 0x3, b = 1 << 2, c = 1 << 3, d = 0x30, e = 1 << 6, f = 1 << 7, g = 0x300;
  std::vector<std::uint16_t> m = {a | b | c | d | e | f, b | c,         a | b | g | e | d, a | b | g | c | d,
                                  f | g | b | c,         a | f | g | c | d, a | f | g | e | d | c, a | b | c,
                                  a | b | c | d | e | f | g, a | b | c | d | f | g};
  m.resize(std::min(m.size(), count));
  Rng rng(0x61797068);
  std::size_t tries = 0;
  while (m.size() < count) {
    if (++tries > 1000000) throw ConfigError("cannot build " + std::to_string(count) + " distinct glyphs");
    const auto cand = static_cast<std::uint16_t>(rng.next() & 0xFFFF);
    const int pc = std::popcount(cand);
    if (pc < 3 || pc > 7) continue;
    bool ok = true;
    for (auto x : m)
      if (std::popcount(static_cast<unsigned>(x ^ cand)) < 3) {
        ok = false;
        break;
      }
    if (ok) m.push_back(cand);
  }
  return m;
}

// ---------------------------------------------------------------------------

struct SceneConfig {
  std::size_t image_size = 256;
  std::size_t min_instances = 14, max_instances = 20;
  double min_glyph_height = 8, max_glyph_height = 32;  // pixels
  std::size_t min_chars = 2, max_chars = 5;
  double advance = 0.8;        // character pitch as a fraction of glyph height
  double glyph_aspect = 0.6;   // glyph width / height
  double min_gap = 2;          // pixels between instance boxes; 0 allows touching
  double max_bend = 1.2;       // radians of total arc bend
  double max_rotation = 0.5;   // radians
  double min_contrast = 90, max_contrast = 180;
  double min_background = 20, max_background = 235;
  double noise_sigma = 4;
  std::size_t place_attempts = 300;
  std::size_t restarts = 30;

  void validate(std::size_t alphabet_size) const {
    auto fail = [](const std::string& m) { throw ConfigError("scene config: " + m); };
    if (image_size < 16) fail("image_size must be >= 16");
    if (min_instances < 1 || min_instances > max_instances) fail("instance range must satisfy 1 <= min <= max");
    if (!(min_glyph_height >= 4) || min_glyph_height > max_glyph_height) fail("glyph height range must satisfy 4 <= min <= max");
    if (min_chars < 1 || min_chars > max_chars) fail("char range must satisfy 1 <= min <= max");
    if (max_chars > 11) fail("at most 11 characters per instance");
    if (!(advance > 0) || !(glyph_aspect > 0) || min_gap < 0) fail("advance/aspect must be > 0, gap >= 0");
    if (min_contrast > max_contrast || min_background > max_background) fail("contrast/background ranges reversed");
    if (alphabet_size < 2) fail("alphabet needs >= 2 symbols");
  }
};

inline nlohmann::json to_json(const SceneConfig& c) {
  return {{"image_size", c.image_size},
          {"min_instances", c.min_instances},
          {"max_instances", c.max_instances},
          {"min_glyph_height", c.min_glyph_height},
          {"max_glyph_height", c.max_glyph_height},
          {"min_chars", c.min_chars},
          {"max_chars", c.max_chars},
          {"advance", c.advance},
          {"glyph_aspect", c.glyph_aspect},
          {"min_gap", c.min_gap},
          {"max_bend", c.max_bend},
          {"max_rotation", c.max_rotation},
          {"min_contrast", c.min_contrast},
          {"max_contrast", c.max_contrast},
          {"min_background", c.min_background},
          {"max_background", c.max_background},
          {"noise_sigma", c.noise_sigma},
          {"place_attempts", c.place_attempts},
          {"restarts", c.restarts}};
}

inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
#define ES_FIELD(name) c.name = j.value(#name, c.name)
  ES_FIELD(image_size);
  ES_FIELD(min_instances);
  ES_FIELD(max_instances);
  ES_FIELD(min_glyph_height);
  ES_FIELD(max_glyph_height);
  ES_FIELD(min_chars);
  ES_FIELD(max_chars);
  ES_FIELD(advance);
  ES_FIELD(glyph_aspect);
  ES_FIELD(min_gap);
  ES_FIELD(max_bend);
  ES_FIELD(max_rotation);
  ES_FIELD(min_contrast);
  ES_FIELD(max_contrast);
  ES_FIELD(min_background);
  ES_FIELD(max_background);
  ES_FIELD(noise_sigma);
  ES_FIELD(place_attempts);
  ES_FIELD(restarts);
#undef ES_FIELD
  return c;
}

/// Small scenes for overfitting and ablation runs.
inline SceneConfig small_scene_config() {
  SceneConfig c;
  c.image_size = 128;
  c.min_instances = 3;
  c.max_instances = 6;
  c.min_glyph_height = 12;
  c.max_glyph_height = 22;
  c.min_chars = 2;
  c.max_chars = 4;
  c.max_bend = 0.9;
  c.max_rotation = 0.35;
  return c;
}

struct Scene {
  GrayImage image;
  SceneAnnotation annotation;
};

namespace detail {

struct PlannedInstance {
  double height = 0;
  std::vector<int> ids;
};

struct PlacedGlyph {
  double cx, cy, tx, ty;  // center and unit tangent, pixels
};

struct Placement {
  ControlPointSet cps_px;
  std::vector<PlacedGlyph> glyphs;
  std::array<double, 4> box;  // x0, y0, x1, y1 pixels
};

inline void grow(std::array<double, 4>& b, double x, double y, double r = 0) {
  b[0] = std::min(b[0], x - r);
  b[1] = std::min(b[1], y - r);
  b[2] = std::max(b[2], x + r);
  b[3] = std::max(b[3], y + r);
}

/// Lays an instance along a circular arc of the text's length. Control
/// points sit at arc lengths 0, L/3, 2L/3, L.
inline Placement layout_instance(const PlannedInstance& inst, const SceneConfig& cfg, double ox, double oy,
                                 double rotation, double bend, const std::vector<std::uint16_t>& masks) {
  const double m = static_cast<double>(inst.ids.size());
  const double L = m * cfg.advance * inst.height;
  Placement p;
  auto arc = [&](double s) -> Point2 {
    // Start at the origin heading along +x, turning at constant curvature.
    const double k = bend / L;
    if (std::abs(k) < 1e-9) return {s, 0};
    return {std::sin(k * s) / k, (1 - std::cos(k * s)) / k};
  };
  const double cr = std::cos(rotation), sr = std::sin(rotation);
  for (int j = 0; j < 4; ++j) {
    const Point2 a = arc(L * j / 3.0);
    p.cps_px[j] = {ox + cr * a.x - sr * a.y, oy + sr * a.x + cr * a.y};
  }
  p.box = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  const double stroke = std::max(1.0, 0.12 * inst.height);
  const double gw = cfg.glyph_aspect * inst.height, gh = inst.height;
  for (std::size_t j = 0; j < inst.ids.size(); ++j) {
    const double t = (static_cast<double>(j) + 0.5) / m;
    const Point2 c = curve_point(p.cps_px, t);
    auto [seg, u] = chained_segment(t);
    Point2 d = segment_derivative(p.cps_px, seg, u);
    const double len = std::hypot(d.x, d.y);
    const double tx = len > 0 ? d.x / len : 1, ty = len > 0 ? d.y / len : 0;
    p.glyphs.push_back({c.x, c.y, tx, ty});
    const auto mask = masks[static_cast<std::size_t>(inst.ids[j])];
    for (std::size_t s = 0; s < 16; ++s) {
      if (!(mask >> s & 1)) continue;
      const auto& g = glyph_segments()[s];
      for (auto [uu, vv] : {std::pair{g.u0, g.v0}, std::pair{g.u1, g.v1}}) {
        const double lx = (uu - 0.5) * gw, ly = (vv - 0.5) * gh;
        grow(p.box, c.x + lx * tx - ly * ty, c.y + lx * ty + ly * tx, stroke / 2 + 0.5);
      }
    }
  }
  for (const auto& q : sample_curve(p.cps_px, 101)) grow(p.box, q.x, q.y, 0.5);
  return p;
}

inline void render_instance(GrayImage& img, const PlannedInstance& inst, const Placement& p, const SceneConfig& cfg,
                            double value, const std::vector<std::uint16_t>& masks) {
  const double stroke = std::max(1.0, 0.12 * inst.height);
  const double gw = cfg.glyph_aspect * inst.height, gh = inst.height;
  for (std::size_t j = 0; j < inst.ids.size(); ++j) {
    const auto& gl = p.glyphs[j];
    const auto mask = masks[static_cast<std::size_t>(inst.ids[j])];
    auto to_px = [&](double uu, double vv) {
      const double lx = (uu - 0.5) * gw, ly = (vv - 0.5) * gh;
      return Point2{gl.cx + lx * gl.tx - ly * gl.ty, gl.cy + lx * gl.ty + ly * gl.tx};
    };
    for (std::size_t s = 0; s < 16; ++s) {
      if (!(mask >> s & 1)) continue;
      const auto& g = glyph_segments()[s];
      const Point2 a = to_px(g.u0, g.v0), b = to_px(g.u1, g.v1);
      draw_line(img, a.x, a.y, b.x, b.y, stroke, value);
    }
  }
}

}  // namespace detail

/// Deterministic in (config, seed). Throws ConfigError when the requested
/// instances cannot be placed without overlap.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed, const Alphabet& alphabet = Alphabet::standard(),
                            const std::string& image_id = "") {
  cfg.validate(alphabet.size());
  static const std::vector<std::uint16_t> masks = glyph_masks(Alphabet::standard().size());
  if (alphabet.size() > masks.size()) throw ConfigError("alphabet larger than the glyph inventory");
  Rng rng(seed);
  const double S = static_cast<double>(cfg.image_size);
  for (std::size_t attempt = 0; attempt <= cfg.restarts; ++attempt) {
    const auto count = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(cfg.min_instances), static_cast<std::int64_t>(cfg.max_instances)));
    // Stratified log-uniform heights so every scene spans the scale range.
    std::vector<detail::PlannedInstance> plan(count);
    const double llo = std::log(cfg.min_glyph_height), lhi = std::log(cfg.max_glyph_height);
    for (std::size_t i = 0; i < count; ++i) {
      const double q = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(count);
      plan[i].height = std::exp(llo + (lhi - llo) * q);
      const auto m = rng.integer(static_cast<std::int64_t>(cfg.min_chars), static_cast<std::int64_t>(cfg.max_chars));
      for (std::int64_t j = 0; j < m; ++j)
        plan[i].ids.push_back(static_cast<int>(rng.integer(0, static_cast<std::int64_t>(alphabet.size()) - 1)));
    }
    std::sort(plan.begin(), plan.end(), [](const auto& a, const auto& b) { return a.height > b.height; });

    std::vector<detail::Placement> placed;
    bool ok = true;
    for (const auto& inst : plan) {
      bool done = false;
      for (std::size_t t = 0; t < cfg.place_attempts && !done; ++t) {
        const double rot = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
        const double bend = rng.uniform() < 0.25 ? 0.0 : rng.uniform(-cfg.max_bend, cfg.max_bend);
        auto p = detail::layout_instance(inst, cfg, 0, 0, rot, bend, masks);
        const double w = p.box[2] - p.box[0], h = p.box[3] - p.box[1];
        if (w + 2 > S || h + 2 > S) continue;
        const double ox = rng.uniform(1 - p.box[0], S - 1 - p.box[2]);
        const double oy = rng.uniform(1 - p.box[1], S - 1 - p.box[3]);
        p = detail::layout_instance(inst, cfg, ox, oy, rot, bend, masks);
        if (p.box[0] < 0.5 || p.box[1] < 0.5 || p.box[2] > S - 0.5 || p.box[3] > S - 0.5) continue;
        bool clear = true;
        for (const auto& o : placed)
          if (p.box[0] < o.box[2] + cfg.min_gap && o.box[0] < p.box[2] + cfg.min_gap &&
              p.box[1] < o.box[3] + cfg.min_gap && o.box[1] < p.box[3] + cfg.min_gap) {
            clear = false;
            break;
          }
        if (clear) {
          placed.push_back(std::move(p));
          done = true;
        }
      }
      if (!done) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    // Background with a gentle gradient, text with a random polarity.
    Scene scene;
    scene.image = GrayImage(cfg.image_size, cfg.image_size);
    const double bg = rng.uniform(cfg.min_background, cfg.max_background);
    const double gx = rng.uniform(-20, 20), gy = rng.uniform(-20, 20);
    for (std::size_t y = 0; y < cfg.image_size; ++y)
      for (std::size_t x = 0; x < cfg.image_size; ++x) {
        const double v = bg + gx * (x / S - 0.5) + gy * (y / S - 0.5);
        scene.image.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    auto& ann = scene.annotation;
    ann.image_id = image_id;
    ann.seed = seed;
    ann.width = ann.height = cfg.image_size;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const double contrast = rng.uniform(cfg.min_contrast, cfg.max_contrast);
      double value = bg + (bg < 128 ? contrast : -contrast);
      value = std::clamp(value, 0.0, 255.0);
      detail::render_instance(scene.image, plan[i], placed[i], cfg, value, masks);
      TextInstance t;
      for (int j = 0; j < 4; ++j) t.control_points[j] = {placed[i].cps_px[j].x / S, placed[i].cps_px[j].y / S};
      t.transcription = alphabet.decode(plan[i].ids);
      const auto& b = placed[i].box;
      t.bbox = {(b[0] + b[2]) / (2 * S), (b[1] + b[3]) / (2 * S), (b[2] - b[0]) / S, (b[3] - b[1]) / S};
      t.glyph_height = plan[i].height;
      ann.instances.push_back(std::move(t));
    }
    if (cfg.noise_sigma > 0)
      for (auto& p : scene.image.pixels)
        p = static_cast<std::uint8_t>(std::lround(std::clamp(p + cfg.noise_sigma * rng.normal(), 0.0, 255.0)));
    return scene;
  }
  throw ConfigError("cannot place " + std::to_string(cfg.min_instances) + "-" + std::to_string(cfg.max_instances) +
                    " instances without overlap in a " + std::to_string(cfg.image_size) + "px image after " +
                    std::to_string(cfg.restarts + 1) + " attempts");
}

inline std::string scene_id(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

/// Seed of scene `index` in a dataset generated from `seed`.
inline std::uint64_t scene_seed(std::uint64_t seed, std::size_t index) {
  return derive_seed(seed, "scene." + std::to_string(index));
}

inline std::vector<Scene> generate_scenes(const SceneConfig& cfg, std::size_t count, std::uint64_t seed) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(cfg, scene_seed(seed, i), Alphabet::standard(), scene_id(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory: images/{id}.pgm, annotations.jsonl, config.json.

struct Dataset {
  std::filesystem::path root;
  nlohmann::json config;  // generator settings as written
  std::vector<Scene> scenes;

  double mean_instances() const {
    if (scenes.empty()) return 0;
    double s = 0;
    for (const auto& sc : scenes) s += static_cast<double>(sc.annotation.instances.size());
    return s / static_cast<double>(scenes.size());
  }
};

inline void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                          const nlohmann::json& config) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw DataError("cannot create " + (dir / "images").string() + ": " + ec.message());
  {
    std::ofstream os(dir / "config.json", std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / "config.json").string());
    os << config.dump(2) << '\n';
  }
  std::ofstream ann(dir / "annotations.jsonl", std::ios::trunc);
  if (!ann) throw DataError("cannot write " + (dir / "annotations.jsonl").string());
  for (const auto& s : scenes) {
    write_pgm(dir / "images" / (s.annotation.image_id + ".pgm"), s.image);
    ann << to_json(s.annotation).dump() << '\n';
  }
  if (!ann) throw DataError("failed writing " + (dir / "annotations.jsonl").string());
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.root = dir;
  const auto cfg_path = dir / "config.json";
  if (std::filesystem::exists(cfg_path)) {
    std::ifstream is(cfg_path);
    try {
      ds.config = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(cfg_path.string() + ": " + e.what());
    }
  }
  const auto ann_path = dir / "annotations.jsonl";
  std::ifstream is(ann_path);
  if (!is) throw DataError("cannot open " + ann_path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = ann_path.string() + ":" + std::to_string(lineno);
    Scene s;
    try {
      s.annotation = annotation_from_json(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    s.image = read_pgm(dir / "images" / (s.annotation.image_id + ".pgm"));
    if (s.image.width != s.annotation.width || s.image.height != s.annotation.height)
      throw DataError(where + ": image size does not match annotation");
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace edgespot
