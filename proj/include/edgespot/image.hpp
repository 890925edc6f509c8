#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "edgespot/checkpoint.hpp"

namespace edgespot {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    while (is >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(is, rest);
    }
    throw DataError(path.string() + ": truncated PGM header");
  };
  if (token() != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (maxval != 255) throw DataError(path.string() + ": only 8-bit PGM is supported");
  is.get();
  GrayImage img(w, h);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) throw DataError(path.string() + ": truncated pixel data");
  return img;
}

/// Anti-aliased line of the given stroke width (pixels) blended toward `value`.
inline void draw_line(GrayImage& img, double x0, double y0, double x1, double y1, double stroke, double value,
                      double opacity = 1.0) {
  const double half = stroke / 2;
  const auto lo_x = static_cast<std::ptrdiff_t>(std::floor(std::min(x0, x1) - half - 1));
  const auto hi_x = static_cast<std::ptrdiff_t>(std::ceil(std::max(x0, x1) + half + 1));
  const auto lo_y = static_cast<std::ptrdiff_t>(std::floor(std::min(y0, y1) - half - 1));
  const auto hi_y = static_cast<std::ptrdiff_t>(std::ceil(std::max(y0, y1) + half + 1));
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  for (std::ptrdiff_t py = std::max<std::ptrdiff_t>(lo_y, 0); py <= std::min<std::ptrdiff_t>(hi_y, img.height - 1); ++py)
    for (std::ptrdiff_t px = std::max<std::ptrdiff_t>(lo_x, 0); px <= std::min<std::ptrdiff_t>(hi_x, img.width - 1); ++px) {
      const double cx = px + 0.5, cy = py + 0.5;
      double t = len2 > 0 ? ((cx - x0) * dx + (cy - y0) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = x0 + t * dx - cx, ey = y0 + t * dy - cy;
      const double cover = std::clamp(half + 0.5 - std::sqrt(ex * ex + ey * ey), 0.0, 1.0) * opacity;
      if (cover <= 0) continue;
      auto& p = img.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py));
      p = static_cast<std::uint8_t>(std::lround(p + (value - p) * cover));
    }
}

inline void draw_rect(GrayImage& img, double x0, double y0, double x1, double y1, double value) {
  draw_line(img, x0, y0, x1, y0, 1, value);
  draw_line(img, x1, y0, x1, y1, 1, value);
  draw_line(img, x1, y1, x0, y1, 1, value);
  draw_line(img, x0, y1, x0, y0, 1, value);
}

}  // namespace edgespot
